//! Retrieval metrics and class-disjoint train/validation splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

/// Which items act as queries and which as the searched collection.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Protocol {
    /// Every item queries all the others.
    #[default]
    LeaveOneOut,
    /// Disjoint query and collection sets, given as row indices.
    QueryCollection { queries: Vec<usize>, collection: Vec<usize> },
}

/// Embeddings (one row per item) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    embeddings: Tensor,
    labels: Vec<usize>,
    pub protocol: Protocol,
}

impl EmbeddingIndex {
    pub fn new(embeddings: Tensor, labels: Vec<usize>) -> Result<Self> {
        if embeddings.rank() != 2 {
            return Err(Error::shape(format!("embeddings must be a matrix, got {:?}", embeddings.shape())));
        }
        if embeddings.shape()[0] != labels.len() {
            return Err(Error::shape(format!("{} embeddings but {} labels", embeddings.shape()[0], labels.len())));
        }
        Ok(EmbeddingIndex { embeddings, labels, protocol: Protocol::LeaveOneOut })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        Self::new(Tensor::matrix(&rows)?, labels)
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Result<Self> {
        if let Protocol::QueryCollection { queries, collection } = &protocol {
            let n = self.len();
            if queries.iter().chain(collection).any(|&i| i >= n) {
                return Err(Error::argument("query/collection index out of range"));
            }
            if queries.is_empty() || collection.is_empty() {
                return Err(Error::argument("query and collection sets must be non-empty"));
            }
        }
        self.protocol = protocol;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    fn row(&self, i: usize) -> &[f64] {
        let w = self.embeddings.shape()[1];
        &self.embeddings.data()[i * w..(i + 1) * w]
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        self.row(a).iter().zip(self.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// Euclidean distances between all rows; exactly symmetric with a zero diagonal.
pub fn pairwise_distances(index: &EmbeddingIndex) -> Tensor {
    let n = index.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let d = index.distance(i, j);
            out.set(&[i, j], d);
            out.set(&[j, i], d);
        }
    }
    out
}

/// Fraction of queries with at least one same-label item among their K
/// nearest candidates, for each requested K.
///
/// Candidates are ranked by distance, ties by row index. A query is never
/// its own candidate.
pub fn recall_at_k(index: &EmbeddingIndex, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if index.is_empty() {
        return Err(Error::argument("recall on an empty index"));
    }
    let all: Vec<usize> = (0..index.len()).collect();
    let (queries, collection) = match &index.protocol {
        Protocol::LeaveOneOut => (&all, &all),
        Protocol::QueryCollection { queries, collection } => (queries, collection),
    };
    let candidate_count = match index.protocol {
        Protocol::LeaveOneOut => index.len() - 1,
        Protocol::QueryCollection { .. } => collection.len(),
    };
    for &k in ks {
        if k == 0 || k >= candidate_count {
            return Err(Error::argument(format!("K = {k} must be in 1..{candidate_count} (number of candidates)")));
        }
    }
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let mut hits = vec![0usize; ks.len()];
    for &q in queries {
        let mut ranked: Vec<(f64, usize)> =
            collection.iter().filter(|&&c| c != q).map(|&c| (index.distance(q, c), c)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k_max < ranked.len() {
            ranked.select_nth_unstable_by(k_max, cmp);
            ranked.truncate(k_max);
        }
        ranked.sort_unstable_by(cmp);
        let first_hit = ranked.iter().position(|&(_, c)| index.labels[c] == index.labels[q]);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if first_hit.is_some_and(|p| p < k) {
                *h += 1;
            }
        }
    }
    Ok(ks.iter().zip(hits).map(|(&k, h)| (k, h as f64 / queries.len() as f64)).collect())
}

/// How to draw repeated class-disjoint train/validation splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitPlan {
    pub repetitions: usize,
    /// Fraction of classes used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan { repetitions: 10, train_fraction: 0.5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// `plan.repetitions` random partitions of `classes`, each sorted.
pub fn make_splits(classes: &[usize], plan: &SplitPlan) -> Result<Vec<Split>> {
    let mut distinct = classes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::argument("splitting needs at least two classes"));
    }
    if plan.repetitions < 1 {
        return Err(Error::config("repetitions", "must be at least 1"));
    }
    if !(plan.train_fraction > 0.0 && plan.train_fraction < 1.0) {
        return Err(Error::config("train_fraction", "must lie strictly between 0 and 1"));
    }
    let n = distinct.len();
    let n_train = ((plan.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((0..plan.repetitions)
        .map(|r| {
            let mut shuffled = distinct.clone();
            shuffled.shuffle(&mut seeded(derive_seed(plan.seed, r as u64)));
            let mut train = shuffled[..n_train].to_vec();
            let mut val = shuffled[n_train..].to_vec();
            train.sort_unstable();
            val.sort_unstable();
            Split { train, val }
        })
        .collect())
}
