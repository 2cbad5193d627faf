//! Grayscale image samples: a seeded synthetic generator and IDX file I/O.

mod idx;
mod synthetic;

pub use idx::{encode_idx, load_idx, read_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::collections::BTreeSet;

/// A single-channel image with pixel values in [0, 1], stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size");
        Image { height, width, pixels }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Mirror image around the vertical axis.
    pub fn flipped_horizontally(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Image::new(self.height, self.width, pixels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Samples whose label is in `classes`, in their original order.
    pub fn restrict_to(&self, classes: &[usize]) -> Dataset {
        let keep: BTreeSet<usize> = classes.iter().copied().collect();
        Dataset { samples: self.samples.iter().filter(|s| keep.contains(&s.label)).cloned().collect() }
    }
}
