use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{loss, sample_batch, AdamConfig, AdamState, LossConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::recall_at_k;
use crate::model::Model;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Classes per batch (P).
    pub classes_per_batch: usize,
    /// Samples per class in a batch (K).
    pub samples_per_class: usize,
    /// Mirror each batch image left-right with probability 1/2.
    pub flip: bool,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            steps_per_epoch: 20,
            classes_per_batch: 4,
            samples_per_class: 4,
            flip: false,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("classes_per_batch", self.classes_per_batch),
            ("samples_per_class", self.samples_per_class),
        ] {
            if v == 0 {
                return Err(Error::config(format!("train.{name}"), "must be at least 1"));
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.epsilon > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2))
        {
            return Err(Error::config("train.optimizer", "needs lr > 0, epsilon > 0 and betas in [0, 1)"));
        }
        self.loss.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("train.loss.{path}"), message),
            other => other,
        })
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Leave-one-out Recall@1 on the validation set after the epoch.
    pub recall_at_1: f64,
}

/// Samples one batch, runs forward and backward, applies one Adam update and
/// returns the batch loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    data: &Dataset,
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let batch = sample_batch(labels, cfg.classes_per_batch, cfg.samples_per_class, seed)?;
    let mut flips = seeded(derive_seed(seed, 1));
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut rows = Vec::with_capacity(batch.len());
    for &i in &batch.indices {
        let image = &data.samples[i].image;
        let e = if cfg.flip && flips.random_bool(0.5) {
            bound.embed(&mut tape, &image.flipped_horizontally())?
        } else {
            bound.embed(&mut tape, image)?
        };
        rows.push(e);
    }
    let embeddings = tape.stack_rows(&rows)?;
    let l = loss(&mut tape, embeddings, &batch, &cfg.loss, model.block.config.branches)?;
    let value = tape.value(l).item();
    if !value.is_finite() {
        return Err(Error::argument(format!("loss became non-finite ({value})")));
    }
    tape.backward(l)?;
    let grads: Vec<Tensor> = bound.vars().into_iter().map(|v| tape.grad_or_zeros(v)).collect();
    adam.step_model(model, &grads)?;
    Ok(value)
}

/// Trains `model` on `train_set` and reports validation Recall@1 after each
/// epoch. `on_epoch` sees each record as soon as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let labels = train_set.labels();
    let mut adam = AdamState::for_model(cfg.optimizer.clone(), model);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let s = derive_seed(seed, ((epoch - 1) * cfg.steps_per_epoch + step) as u64);
            total += train_step(model, &mut adam, train_set, &labels, cfg, s)?;
        }
        let recall = recall_at_k(&model.index(val_set)?, &[1])?[&1];
        let record = EpochRecord { epoch, loss: total / cfg.steps_per_epoch as f64, recall_at_1: recall };
        on_epoch(&record)?;
        log.push(record);
    }
    Ok(log)
}
