//! Selection blocks (feature maps → attention weights) and the merging block.

use super::dictionary::{Dictionary, SelectionMode};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var, DEFAULT_EPSILON};

/// Assignment weights of shape N×h×w×c, normalized over the leading axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTensor(Tensor);

impl AttentionTensor {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::shape(format!("attention must be N×h×w×c, got {:?}", weights.shape())));
        }
        Ok(AttentionTensor(weights))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn branches(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn weight(&self, n: usize, i: usize, j: usize, k: usize) -> f64 {
        self.0.get(&[n, i, j, k])
    }

    /// Largest |Σₙ A[n,i,j,k] − 1| over all positions.
    pub fn partition_error(&self) -> f64 {
        let n = self.branches();
        let block = self.0.len() / n;
        let d = self.0.data();
        (0..block).map(|p| ((0..n).map(|b| d[b * block + p]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_inputs(phi_f: &[usize], dictionary_shape: &[usize], mode: SelectionMode) -> Result<()> {
    if phi_f.len() != 3 {
        return Err(Error::shape(format!("φ(F) must be h×w×m, got {phi_f:?}")));
    }
    let m = *dictionary_shape.last().unwrap_or(&0);
    if phi_f[2] != m {
        return Err(Error::shape(format!("φ(F) has {} channels, dictionary directions {m}", phi_f[2])));
    }
    let expected_rank = match mode {
        SelectionMode::Feature => 2,
        SelectionMode::Dimension => 3,
    };
    if dictionary_shape.len() != expected_rank {
        return Err(Error::shape(format!(
            "{} dictionary must have rank {expected_rank}, got {dictionary_shape:?}",
            mode.name()
        )));
    }
    Ok(())
}

/// Soft assignment on the tape.
///
/// Computes cosine similarities between every φ(f_ij) and every dictionary
/// direction, scales them by `alpha` and normalizes with a softmax over the
/// entries. Feature mode broadcasts each location's weights over `channels`.
pub fn select(
    tape: &mut Tape,
    phi_f: Var,
    entries: Var,
    mode: SelectionMode,
    alpha: f64,
    channels: usize,
) -> Result<Var> {
    let shape = tape.shape(phi_f).to_vec();
    check_inputs(&shape, tape.shape(entries), mode)?;
    let (h, w, m) = (shape[0], shape[1], shape[2]);
    let n = tape.shape(entries)[0];
    if mode == SelectionMode::Dimension && tape.shape(entries)[1] != channels {
        return Err(Error::shape(format!(
            "dimension dictionary covers {} channels, map has {channels}",
            tape.shape(entries)[1]
        )));
    }

    let rows = tape.reshape(phi_f, &[h * w, m])?;
    let rows = tape.l2_normalize(rows, 1, DEFAULT_EPSILON)?;
    let directions = tape.reshape(entries, &[tape.value(entries).len() / m, m])?;
    let directions = tape.l2_normalize(directions, 1, DEFAULT_EPSILON)?;
    let directions = tape.transpose(directions)?;
    let sims = tape.matmul(rows, directions)?;

    let per_location = match mode {
        SelectionMode::Feature => {
            let a = tape.softmax(sims, 1, alpha)?;
            tape.expand_last(a, channels)?
        }
        SelectionMode::Dimension => {
            let sims = tape.reshape(sims, &[h * w, n, channels])?;
            tape.softmax(sims, 1, alpha)?
        }
    };
    let branch_major = tape.permute(per_location, &[1, 0, 2])?;
    tape.reshape(branch_major, &[n, h, w, channels])
}

fn select_plain(phi_f: &Tensor, dictionary: &Dictionary, mode: SelectionMode) -> Result<AttentionTensor> {
    if dictionary.mode != mode {
        return Err(Error::config("mode", format!("{} selection needs a {} dictionary", mode.name(), mode.name())));
    }
    let mut tape = Tape::new();
    let x = tape.constant(phi_f.clone());
    let d = tape.constant(dictionary.entries.clone());
    let a = select(&mut tape, x, d, mode, dictionary.alpha, dictionary.channels)?;
    AttentionTensor::new(tape.value(a).clone())
}

/// Softmax assignment of whole local features to dictionary entries.
pub fn select_feature_wise(phi_f: &Tensor, dictionary: &Dictionary) -> Result<AttentionTensor> {
    select_plain(phi_f, dictionary, SelectionMode::Feature)
}

/// Softmax assignment of each channel of each local feature.
pub fn select_dimension_wise(phi_f: &Tensor, dictionary: &Dictionary) -> Result<AttentionTensor> {
    select_plain(phi_f, dictionary, SelectionMode::Dimension)
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(DEFAULT_EPSILON);
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(DEFAULT_EPSILON);
    dot / (nu * nv)
}

/// Cosine similarity of φ(f_ij) with each entry's direction for channel k,
/// as a (h·w) × c × N array in location-major order.
pub fn similarities(phi_f: &Tensor, dictionary: &Dictionary) -> Result<Vec<Vec<Vec<f64>>>> {
    check_inputs(phi_f.shape(), dictionary.entries.shape(), dictionary.mode)?;
    let m = phi_f.shape()[2];
    let n = dictionary.branches();
    Ok(phi_f
        .data()
        .chunks(m)
        .map(|f| {
            (0..dictionary.channels).map(|k| (0..n).map(|b| cosine(f, dictionary.direction(b, k))).collect()).collect()
        })
        .collect())
}

/// One-hot assignment to the most similar entry; ties go to the lowest index.
///
/// Feature mode decides once per location, dimension mode once per channel.
pub fn hard_assign(phi_f: &Tensor, dictionary: &Dictionary) -> Result<AttentionTensor> {
    let sims = similarities(phi_f, dictionary)?;
    let (h, w) = (phi_f.shape()[0], phi_f.shape()[1]);
    let (n, c) = (dictionary.branches(), dictionary.channels);
    let mut out = Tensor::zeros(&[n, h, w, c]);
    for (loc, per_channel) in sims.iter().enumerate() {
        let (i, j) = (loc / w, loc % w);
        for (k, scores) in per_channel.iter().enumerate() {
            let mut best = 0;
            for (b, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = b;
                }
            }
            out.set(&[best, i, j, k], 1.0);
        }
    }
    AttentionTensor::new(out)
}

/// H⁽ⁿ⁾ = A⁽ⁿ⁾ ⊙ F for every entry n.
pub fn merge(tape: &mut Tape, features: Var, attention: Var) -> Result<Vec<Var>> {
    let (fs, as_) = (tape.shape(features).to_vec(), tape.shape(attention).to_vec());
    if fs.len() != 3 || as_.len() != 4 || as_[1..] != fs[..] {
        return Err(Error::shape(format!("cannot merge attention {as_:?} with map {fs:?}")));
    }
    (0..as_[0])
        .map(|n| {
            let a = tape.select_leading(attention, n)?;
            tape.mul(a, features)
        })
        .collect()
}

/// [`merge`] on plain tensors.
pub fn merge_tensors(features: &Tensor, attention: &AttentionTensor) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let a = tape.constant(attention.tensor().clone());
    let maps = merge(&mut tape, f, a)?;
    Ok(maps.into_iter().map(|v| tape.value(v).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_tensor;

    fn dict(mode: SelectionMode, entries: Tensor, alpha: f64, channels: usize) -> Dictionary {
        Dictionary { mode, entries, alpha, channels }
    }

    #[test]
    fn single_entry_weights_are_exactly_one() {
        let phi = normal_tensor(&[3, 2, 4], 1);
        let d = Dictionary::init(SelectionMode::Feature, 1, 4, 5, 5.0, 0).unwrap();
        let a = select_feature_wise(&phi, &d).unwrap();
        assert!(a.tensor().data().iter().all(|&x| x == 1.0));
        let d = Dictionary::init(SelectionMode::Dimension, 1, 4, 5, 5.0, 0).unwrap();
        let a = select_dimension_wise(&phi, &d).unwrap();
        assert!(a.tensor().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn equidistant_feature_gets_uniform_weights() {
        // φ(f) = e3 is orthogonal to e1 and e2.
        let phi = Tensor::new(vec![1, 1, 3], vec![0.0, 0.0, 2.0]).unwrap();
        let entries = Tensor::matrix(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let a = select_feature_wise(&phi, &dict(SelectionMode::Feature, entries, 5.0, 2)).unwrap();
        assert!(a.tensor().data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn two_entries_hand_softmax() {
        // similarities (1, 0)
        let phi = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        let entries = Tensor::matrix(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = select_feature_wise(&phi, &dict(SelectionMode::Feature, entries, 1.0, 3)).unwrap();
        for k in 0..3 {
            assert!((a.weight(0, 0, 0, k) - 0.7311).abs() < 1e-4);
            assert!((a.weight(1, 0, 0, k) - 0.2689).abs() < 1e-4);
        }
    }

    #[test]
    fn identical_directions_share_weight() {
        let phi = normal_tensor(&[2, 2, 3], 9);
        let base = normal_tensor(&[1, 4, 3], 10);
        let entries = Tensor::new(vec![3, 4, 3], base.data().repeat(3)).unwrap();
        let a = select_dimension_wise(&phi, &dict(SelectionMode::Dimension, entries, 5.0, 4)).unwrap();
        assert!(a.tensor().data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        let phi = normal_tensor(&[2, 2, 4], 0);
        let d = Dictionary::init(SelectionMode::Feature, 2, 4, 4, 5.0, 0).unwrap();
        assert!(matches!(select_dimension_wise(&phi, &d), Err(Error::Config { .. })));
    }

    #[test]
    fn hard_assign_examples() {
        // similarities (0.9, 0.1) up to scale
        let phi = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        let entries = Tensor::matrix(&[vec![0.9, (1.0f64 - 0.81).sqrt()], vec![0.1, (1.0f64 - 0.01).sqrt()]]).unwrap();
        let a = hard_assign(&phi, &dict(SelectionMode::Feature, entries, 5.0, 2)).unwrap();
        assert_eq!(a.tensor().data(), &[1.0, 1.0, 0.0, 0.0]);

        let tied = Tensor::matrix(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let a = hard_assign(&phi, &dict(SelectionMode::Feature, tied, 5.0, 1)).unwrap();
        assert_eq!(a.tensor().data(), &[1.0, 0.0]);
    }

    #[test]
    fn merge_examples() {
        let f = normal_tensor(&[2, 3, 4], 2);
        let ones = AttentionTensor::new(Tensor::full(&[1, 2, 3, 4], 1.0)).unwrap();
        assert_eq!(merge_tensors(&f, &ones).unwrap(), vec![f.clone()]);

        let phi = normal_tensor(&[2, 3, 5], 3);
        let d = Dictionary::init(SelectionMode::Dimension, 3, 5, 4, 5.0, 4).unwrap();
        let hard = hard_assign(&phi, &d).unwrap();
        let maps = merge_tensors(&f, &hard).unwrap();
        for (n, map) in maps.iter().enumerate() {
            for (idx, &v) in map.data().iter().enumerate() {
                let (loc, k) = (idx / 4, idx % 4);
                let weight = hard.weight(n, loc / 3, loc % 3, k);
                assert_eq!(v, weight * f.data()[idx]);
            }
        }

        let bad = AttentionTensor::new(Tensor::full(&[2, 2, 3, 5], 0.5)).unwrap();
        assert!(matches!(merge_tensors(&f, &bad), Err(Error::Shape(_))));
    }
}
