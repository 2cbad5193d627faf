use std::collections::BTreeMap;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// A mini-batch: which dataset items it holds and every pair and triplet
/// that can be formed inside it. Pair and triplet entries are positions
/// within the batch, not dataset indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// Unordered same-label pairs (i < j).
    pub positives: Vec<(usize, usize)>,
    /// Unordered different-label pairs (i < j).
    pub negatives: Vec<(usize, usize)>,
    /// (anchor, positive, negative) with anchor ≠ positive.
    pub triplets: Vec<(usize, usize, usize)>,
}

impl Batch {
    pub fn from_labels(indices: Vec<usize>, labels: Vec<usize>) -> Self {
        assert_eq!(indices.len(), labels.len());
        let b = labels.len();
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for i in 0..b {
            for j in i + 1..b {
                if labels[i] == labels[j] {
                    positives.push((i, j));
                } else {
                    negatives.push((i, j));
                }
            }
        }
        let mut triplets = Vec::new();
        for a in 0..b {
            for p in 0..b {
                if p == a || labels[p] != labels[a] {
                    continue;
                }
                for n in 0..b {
                    if labels[n] != labels[a] {
                        triplets.push((a, p, n));
                    }
                }
            }
        }
        Batch { indices, labels, positives, negatives, triplets }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `classes` distinct classes, then `per_class` distinct items of each.
///
/// Only classes with at least `per_class` items are eligible. The result is a
/// pure function of the labels, the batch shape and `seed`.
pub fn sample_batch(labels: &[usize], classes: usize, per_class: usize, seed: u64) -> Result<Batch> {
    if classes == 0 || per_class == 0 {
        return Err(Error::argument("batch shape must be positive"));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let eligible: Vec<&Vec<usize>> = members.values().filter(|m| m.len() >= per_class).collect();
    if eligible.len() < classes {
        return Err(Error::argument(format!(
            "need {classes} classes with {per_class} samples each, only {} qualify",
            eligible.len()
        )));
    }
    let mut rng = seeded(seed);
    let mut indices = Vec::with_capacity(classes * per_class);
    for c in sample(&mut rng, eligible.len(), classes).into_iter() {
        let pool = eligible[c];
        for i in sample(&mut rng, pool.len(), per_class).into_iter() {
            indices.push(pool[i]);
        }
    }
    let batch_labels = indices.iter().map(|&i| labels[i]).collect();
    Ok(Batch::from_labels(indices, batch_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(classes: usize, per: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    #[test]
    fn pair_counts() {
        let b = sample_batch(&labels(5, 4), 2, 2, 0).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.positives.len(), 2);
        assert_eq!(b.negatives.len(), 4);
    }

    #[test]
    fn single_class_has_no_negatives() {
        let b = sample_batch(&labels(5, 4), 1, 3, 0).unwrap();
        assert!(b.negatives.is_empty());
        assert!(b.triplets.is_empty());
        assert_eq!(b.positives.len(), 3);
    }

    #[test]
    fn triplet_count_matches_enumeration() {
        let b = sample_batch(&labels(5, 4), 3, 2, 7).unwrap();
        // brute force over all ordered (a, p, n)
        let mut count = 0;
        for a in 0..6 {
            for p in 0..6 {
                for n in 0..6 {
                    if a != p && b.labels[a] == b.labels[p] && b.labels[n] != b.labels[a] {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 24);
        assert_eq!(b.triplets.len(), 24);
        for &(a, p, n) in &b.triplets {
            assert!(b.labels[a] == b.labels[p] && b.labels[a] != b.labels[n]);
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let l = labels(10, 6);
        let a = sample_batch(&l, 4, 3, 42).unwrap();
        assert_eq!(a, sample_batch(&l, 4, 3, 42).unwrap());
        let mut idx = a.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 12);
    }

    #[test]
    fn insufficient_data() {
        assert!(matches!(sample_batch(&labels(2, 4), 3, 2, 0), Err(Error::Argument(_))));
        assert!(sample_batch(&labels(4, 2), 2, 3, 0).is_err());
    }
}
