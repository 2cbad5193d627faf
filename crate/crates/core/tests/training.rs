use std::path::Path;

use diablo::harness::RunConfig;
use diablo::model::Model;
use diablo::rng::normal_tensor;
use diablo::training::*;
use diablo::{Tape, Tensor};

fn loss_value(kind: LossKind, embeddings: &Tensor, batch: &Batch, cfg: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let cfg = LossConfig { kind, ..cfg.clone() };
    let l = loss(&mut tape, e, batch, &cfg, 1).unwrap();
    tape.value(l).item()
}

fn labels_batch(labels: &[usize]) -> Batch {
    Batch::from_labels((0..labels.len()).collect(), labels.to_vec())
}

#[test]
fn losses_are_non_negative() {
    let batch = labels_batch(&[0, 0, 1, 1, 2, 2]);
    for seed in 0..10 {
        let e = normal_tensor(&[6, 5], seed);
        for kind in [LossKind::Contrastive, LossKind::Triplet, LossKind::Binomial] {
            assert!(loss_value(kind, &e, &batch, &LossConfig::default()) >= 0.0);
        }
    }
}

#[test]
fn triplet_loss_ignores_translation() {
    let batch = labels_batch(&[0, 0, 1, 1, 2, 2, 2]);
    for seed in 0..5 {
        let e = normal_tensor(&[7, 4], seed);
        let shift = normal_tensor(&[4], seed + 100);
        let moved =
            Tensor::new(vec![7, 4], e.data().iter().enumerate().map(|(i, v)| v + shift.data()[i % 4]).collect())
                .unwrap();
        let a = loss_value(LossKind::Triplet, &e, &batch, &LossConfig::default());
        let b = loss_value(LossKind::Triplet, &moved, &batch, &LossConfig::default());
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn binomial_gradient(embeddings: &Tensor, batch: &Batch, c: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let e = tape.param(embeddings.clone());
    let cfg = LossConfig { negative_weight: c, ..LossConfig::default() };
    let l = binomial_deviance_loss(&mut tape, e, batch, &cfg, 1).unwrap();
    tape.backward(l).unwrap();
    tape.grad_or_zeros(e).into_data()
}

#[test]
fn binomial_negative_gradient_is_linear_in_weight() {
    let e = normal_tensor(&[4, 3], 5);
    let negatives_only = labels_batch(&[0, 1, 2, 3]);
    let g1 = binomial_gradient(&e, &negatives_only, 1.0);
    for c in [2.0, 25.0, 40.0] {
        let gc = binomial_gradient(&e, &negatives_only, c);
        for (a, b) in g1.iter().zip(&gc) {
            assert!((a * c - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    // with positives present the gradient is affine in C
    let mixed = labels_batch(&[0, 0, 1, 1]);
    let (g0, g10, g20) =
        (binomial_gradient(&e, &mixed, 1e-9), binomial_gradient(&e, &mixed, 10.0), binomial_gradient(&e, &mixed, 20.0));
    for i in 0..g0.len() {
        assert!(((g20[i] - g10[i]) - (g10[i] - g0[i])).abs() < 1e-9);
    }
}

#[test]
fn batches_repeat_with_their_seed() {
    let labels: Vec<usize> = (0..60).map(|i| i % 10).collect();
    let a = sample_batch(&labels, 4, 3, 17).unwrap();
    assert_eq!(a, sample_batch(&labels, 4, 3, 17).unwrap());
    assert_ne!(a, sample_batch(&labels, 4, 3, 18).unwrap());
}

#[test]
fn default_run_lowers_the_loss() {
    let cfg = RunConfig::default();
    let (train_set, val_set) = cfg.datasets(Path::new("")).unwrap();
    let (h, w) = (train_set.samples[0].image.height, train_set.samples[0].image.width);
    let mut model = Model::init(&cfg.model, h, w, 0).unwrap();
    let log = train(&mut model, &train_set, &val_set, &cfg.train, 0, |_| Ok(())).unwrap();
    assert_eq!(log.len(), 10);
    assert!(log[9].loss < log[0].loss, "{} -> {}", log[0].loss, log[9].loss);
}
