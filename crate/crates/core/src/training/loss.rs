//! Pair and triplet losses over a batch of embeddings stored as rows of a B×E matrix.

use serde::{Deserialize, Serialize};

use super::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Added under the square root of squared distances so its derivative stays finite at 0.
const DISTANCE_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Contrastive,
    Triplet,
    Binomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub triplet_margin: f64,
    /// Margin β of the contrastive and binomial deviance losses.
    pub margin: f64,
    /// Weight C of negative pairs in binomial deviance.
    pub negative_weight: f64,
    /// Scale γ of binomial deviance.
    pub scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::Binomial, triplet_margin: 0.1, margin: 0.5, negative_weight: 25.0, scale: 2.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("triplet_margin", self.triplet_margin),
            ("margin", self.margin),
            ("negative_weight", self.negative_weight),
            ("scale", self.scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }
}

fn split_pairs(pairs: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    pairs.iter().copied().unzip()
}

/// ‖e_a − e_b‖² for each pair, as a vector.
fn squared_distances(tape: &mut Tape, embeddings: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (a, b) = split_pairs(pairs);
    let ea = tape.gather_rows(embeddings, &a)?;
    let eb = tape.gather_rows(embeddings, &b)?;
    let diff = tape.sub(ea, eb)?;
    let sq = tape.square(diff);
    tape.sum_axis(sq, 1)
}

/// ⟨e_a, e_b⟩ / `branches` for each pair. For concatenated unit-norm
/// branches this is the mean per-branch cosine, in [−1, 1].
fn similarities(tape: &mut Tape, embeddings: Var, pairs: &[(usize, usize)], branches: usize) -> Result<Var> {
    let (a, b) = split_pairs(pairs);
    let ea = tape.gather_rows(embeddings, &a)?;
    let eb = tape.gather_rows(embeddings, &b)?;
    let prod = tape.mul(ea, eb)?;
    let dots = tape.sum_axis(prod, 1)?;
    Ok(tape.scale(dots, 1.0 / branches as f64))
}

fn check_embeddings(tape: &Tape, embeddings: Var, batch: &Batch) -> Result<()> {
    let s = tape.shape(embeddings);
    if s.len() != 2 || s[0] != batch.len() {
        return Err(Error::shape(format!("embeddings {s:?} do not match a batch of {}", batch.len())));
    }
    Ok(())
}

/// Mean over all pairs of d² (positives) and max(0, β − d)² (negatives).
pub fn contrastive_loss(tape: &mut Tape, embeddings: Var, batch: &Batch, cfg: &LossConfig) -> Result<Var> {
    check_embeddings(tape, embeddings, batch)?;
    let count = batch.positives.len() + batch.negatives.len();
    if count == 0 {
        return Err(Error::argument("contrastive loss needs at least one pair"));
    }
    let mut total = None;
    if !batch.positives.is_empty() {
        let d2 = squared_distances(tape, embeddings, &batch.positives)?;
        total = Some(tape.sum(d2));
    }
    if !batch.negatives.is_empty() {
        let d2 = squared_distances(tape, embeddings, &batch.negatives)?;
        let d2 = tape.add_constant(d2, DISTANCE_EPSILON);
        let d = tape.sqrt(d2);
        let gap = tape.scale(d, -1.0);
        let gap = tape.add_constant(gap, cfg.margin);
        let hinge = tape.relu(gap);
        let sq = tape.square(hinge);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(tape.scale(total.expect("at least one pair"), 1.0 / count as f64))
}

/// Mean over triplets of max(0, d²(a,p) − d²(a,n) + margin).
pub fn triplet_loss(tape: &mut Tape, embeddings: Var, batch: &Batch, cfg: &LossConfig) -> Result<Var> {
    check_embeddings(tape, embeddings, batch)?;
    if batch.triplets.is_empty() {
        return Err(Error::argument("triplet loss needs at least one triplet"));
    }
    let ap: Vec<(usize, usize)> = batch.triplets.iter().map(|&(a, p, _)| (a, p)).collect();
    let an: Vec<(usize, usize)> = batch.triplets.iter().map(|&(a, _, n)| (a, n)).collect();
    let d_ap = squared_distances(tape, embeddings, &ap)?;
    let d_an = squared_distances(tape, embeddings, &an)?;
    let diff = tape.sub(d_ap, d_an)?;
    let shifted = tape.add_constant(diff, cfg.triplet_margin);
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

/// Binomial deviance: mean of log(1 + e^{−γ(s−β)}) over positive pairs plus
/// C times the mean of log(1 + e^{γ(s−β)}) over negative pairs.
pub fn binomial_deviance_loss(
    tape: &mut Tape,
    embeddings: Var,
    batch: &Batch,
    cfg: &LossConfig,
    branches: usize,
) -> Result<Var> {
    check_embeddings(tape, embeddings, batch)?;
    if batch.positives.is_empty() && batch.negatives.is_empty() {
        return Err(Error::argument("binomial deviance needs at least one pair"));
    }
    let mut parts = Vec::new();
    for (pairs, sign, weight) in [(&batch.positives, -1.0, 1.0), (&batch.negatives, 1.0, cfg.negative_weight)] {
        if pairs.is_empty() {
            continue;
        }
        let s = similarities(tape, embeddings, pairs, branches)?;
        let centered = tape.add_constant(s, -cfg.margin);
        let arg = tape.scale(centered, sign * cfg.scale);
        let dev = tape.softplus(arg);
        let mean = tape.mean(dev);
        parts.push(tape.scale(mean, weight));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    Ok(total)
}

/// Dispatches on `cfg.kind`.
pub fn loss(tape: &mut Tape, embeddings: Var, batch: &Batch, cfg: &LossConfig, branches: usize) -> Result<Var> {
    match cfg.kind {
        LossKind::Contrastive => contrastive_loss(tape, embeddings, batch, cfg),
        LossKind::Triplet => triplet_loss(tape, embeddings, batch, cfg),
        LossKind::Binomial => binomial_deviance_loss(tape, embeddings, batch, cfg, branches),
    }
}
