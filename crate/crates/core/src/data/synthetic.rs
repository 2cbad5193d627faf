use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Image, Sample};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Parameters of the synthetic image generator.
///
/// A seeded bank of `bank` small binary textures (motifs, `motif_size`
/// pixels square) is shared by all classes. Each class prototype places
/// `parts` motifs from the bank at fixed positions. A sample is the
/// prototype translated by up to `jitter` pixels in each direction, plus
/// `clutter` bank motifs at random positions, plus Gaussian pixel noise,
/// clipped to [0, 1] and rounded to 256 grey levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub side: usize,
    pub noise: f64,
    pub jitter: usize,
    pub parts: usize,
    pub motif_size: usize,
    pub bank: usize,
    pub clutter: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 20,
            samples_per_class: 30,
            side: 16,
            noise: 0.1,
            jitter: 2,
            parts: 3,
            motif_size: 4,
            bank: 12,
            clutter: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("classes", self.classes),
            ("samples_per_class", self.samples_per_class),
            ("side", self.side),
            ("parts", self.parts),
            ("motif_size", self.motif_size),
            ("bank", self.bank),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.motif_size > self.side {
            return Err(Error::config("motif_size", "must not exceed the image side"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be a finite non-negative number"));
        }
        if self.classes > 256 {
            return Err(Error::config("classes", "at most 256 classes fit in IDX labels"));
        }
        Ok(())
    }
}

/// A square texture of `size × size` intensities.
#[derive(Clone, Debug)]
struct Motif {
    size: usize,
    pixels: Vec<f64>,
}

impl Motif {
    /// Roughly half the pixels lit at a random brightness; never blank.
    fn random(rng: &mut impl Rng, size: usize) -> Motif {
        loop {
            let level = rng.random_range(0.6..1.0);
            let pixels: Vec<f64> = (0..size * size).map(|_| if rng.random_bool(0.5) { level } else { 0.0 }).collect();
            if pixels.iter().any(|&p| p > 0.0) {
                return Motif { size, pixels };
            }
        }
    }

    /// Adds the motif with its top-left corner at (row, col); pixels falling
    /// outside the canvas are dropped.
    fn paint(&self, canvas: &mut [f64], side: usize, row: i64, col: i64) {
        for r in 0..self.size {
            for c in 0..self.size {
                let (y, x) = (row + r as i64, col + c as i64);
                if (0..side as i64).contains(&y) && (0..side as i64).contains(&x) {
                    let v = &mut canvas[y as usize * side + x as usize];
                    *v = v.max(self.pixels[r * self.size + c]);
                }
            }
        }
    }
}

/// A motif placed at a fixed position of a class prototype.
#[derive(Clone, Copy, Debug)]
struct Part {
    motif: usize,
    row: i64,
    col: i64,
}

fn random_position(rng: &mut impl Rng, side: usize, size: usize) -> (i64, i64) {
    let span = (side - size) as i64;
    (rng.random_range(0..=span), rng.random_range(0..=span))
}

/// Generates `classes × samples_per_class` samples, grouped by class.
///
/// The output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let side = spec.side;
    let mut rng = seeded(spec.seed);
    let bank: Vec<Motif> = (0..spec.bank).map(|_| Motif::random(&mut rng, spec.motif_size)).collect();
    let prototypes: Vec<Vec<Part>> = (0..spec.classes)
        .map(|_| {
            (0..spec.parts)
                .map(|_| {
                    let (row, col) = random_position(&mut rng, side, spec.motif_size);
                    Part { motif: rng.random_range(0..spec.bank), row, col }
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let j = spec.jitter as i64;

    let mut samples = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for (label, parts) in prototypes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let (dy, dx) = (rng.random_range(-j..=j), rng.random_range(-j..=j));
            let mut canvas = vec![0.0; side * side];
            for p in parts {
                bank[p.motif].paint(&mut canvas, side, p.row + dy, p.col + dx);
            }
            for _ in 0..spec.clutter {
                let motif = rng.random_range(0..spec.bank);
                let (row, col) = random_position(&mut rng, side, spec.motif_size);
                bank[motif].paint(&mut canvas, side, row, col);
            }
            for p in canvas.iter_mut() {
                let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *p = ((*p + n).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
            samples.push(Sample { image: Image::new(side, side, canvas), label });
        }
    }
    Ok(Dataset { samples })
}
