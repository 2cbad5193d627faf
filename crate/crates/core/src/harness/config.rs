use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_idx, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::{make_splits, SplitPlan};
use crate::model::ModelConfig;
use crate::rng::derive_seed;
use crate::training::TrainConfig;

/// Where a run gets its images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

impl DataSource {
    /// Generates or loads the dataset. Relative IDX paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => {
                spec.validate().map_err(|e| prefixed(e, "data.synthetic"))?;
                generate_synthetic(spec)
            }
            DataSource::Idx { images, labels } => load_idx(base.join(images), base.join(labels)),
        }
    }
}

/// Which class-disjoint train/validation split a run uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Index into the sequence of random splits drawn from the run seed.
    pub repetition: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.5, repetition: 0 }
    }
}

/// Everything one training run depends on. Serialized as the JSON config
/// file; unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Ks reported by `evaluate` when `--k` is not given.
    pub eval_ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSource::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_ks: vec![1, 2, 4, 8],
        }
    }
}

/// Seed streams derived from [`RunConfig::seed`].
pub(crate) const SPLIT_STREAM: u64 = 1;
pub(crate) const INIT_STREAM: u64 = 2;
pub(crate) const TRAIN_STREAM: u64 = 3;

pub(crate) fn prefixed(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        Error::Argument(message) => Error::config(prefix, message),
        other => other,
    }
}

impl RunConfig {
    /// Parses JSON, naming the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field that can be checked without the data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::config("split.train_fraction", "must lie strictly between 0 and 1"));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::config("eval_ks", "needs at least one K, each at least 1"));
        }
        Ok(())
    }

    /// The train and validation class lists for this run.
    pub fn split_classes(&self, classes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let plan = SplitPlan {
            repetitions: self.split.repetition + 1,
            train_fraction: self.split.train_fraction,
            seed: derive_seed(self.seed, SPLIT_STREAM),
        };
        let split = make_splits(classes, &plan).map_err(|e| prefixed(e, "split"))?.pop().expect("repetitions ≥ 1");
        Ok((split.train, split.val))
    }

    /// Loads the data and cuts it into the run's train and validation sets.
    pub fn datasets(&self, base: &Path) -> Result<(Dataset, Dataset)> {
        let data = self.data.load(base)?;
        if data.is_empty() {
            return Err(Error::config("data", "dataset is empty"));
        }
        let (train, val) = self.split_classes(&data.classes())?;
        Ok((data.restrict_to(&train), data.restrict_to(&val)))
    }
}
