use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// How local features are split across dictionary entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Each location goes to the entries as a whole vector; weights are
    /// shared by all channels of that location.
    Feature,
    /// Every channel of every location is assigned on its own, using one
    /// direction per (entry, channel).
    Dimension,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Feature => "feature",
            SelectionMode::Dimension => "dimension",
        }
    }
}

/// The attention codebook.
///
/// Feature mode stores `N × m` entries; dimension mode stores `N × c × m`
/// directions. `channels` is the channel count c of the map the attention
/// is applied to, in both modes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub mode: SelectionMode,
    pub entries: Tensor,
    pub alpha: f64,
    pub channels: usize,
}

impl Dictionary {
    /// Entries drawn from a standard normal, each direction rescaled to unit norm.
    pub fn init(
        mode: SelectionMode,
        branches: usize,
        width: usize,
        channels: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if branches < 1 {
            return Err(Error::argument("dictionary needs at least one entry"));
        }
        if width == 0 || channels == 0 {
            return Err(Error::argument("dictionary extents must be positive"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::argument(format!("hardness {alpha} must be positive")));
        }
        let shape = match mode {
            SelectionMode::Feature => vec![branches, width],
            SelectionMode::Dimension => vec![branches, channels, width],
        };
        let mut rng = seeded(seed);
        let numel: usize = shape.iter().product();
        let mut data: Vec<f64> = (0..numel).map(|_| StandardNormal.sample(&mut rng)).collect();
        for dir in data.chunks_mut(width) {
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Dictionary { mode, entries: Tensor::new(shape, data)?, alpha, channels })
    }

    /// Number of entries N.
    pub fn branches(&self) -> usize {
        self.entries.shape()[0]
    }

    /// Direction width m.
    pub fn width(&self) -> usize {
        *self.entries.shape().last().expect("non-scalar entries")
    }

    /// Direction for entry `n`; `k` is ignored in feature mode.
    pub fn direction(&self, n: usize, k: usize) -> &[f64] {
        let m = self.width();
        let start = match self.mode {
            SelectionMode::Feature => n * m,
            SelectionMode::Dimension => (n * self.channels + k) * m,
        };
        &self.entries.data()[start..start + m]
    }
}
