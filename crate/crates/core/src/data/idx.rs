//! The IDX container used by MNIST: big-endian u32 magic, big-endian u32
//! dimension sizes, then one unsigned byte per element.

use std::fs;
use std::path::Path;

use super::{Dataset, Image, Sample};
use crate::error::{Error, Result};

/// Magic of a rank-3 unsigned-byte tensor (images).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic of a rank-1 unsigned-byte tensor (labels).
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let raw = self.take(4)?;
        Ok(u32::from_be_bytes(raw.try_into().expect("4 bytes")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.bytes.len() as u64,
                message: format!("{} file truncated: needed {n} more bytes at offset {}", self.what, self.pos),
            }),
        }
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let found = self.u32()?;
        if found != magic {
            return Err(Error::Format {
                offset: 0,
                message: format!("{} file has magic {found:#010x}, expected {magic:#010x}", self.what),
            });
        }
        Ok(())
    }
}

/// Parses an image file and a label file already in memory.
pub fn read_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = Reader { bytes: images, pos: 0, what: "image" };
    img.expect_magic(IMAGES_MAGIC)?;
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;

    let mut lab = Reader { bytes: labels, pos: 0, what: "label" };
    lab.expect_magic(LABELS_MAGIC)?;
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("label file holds {label_count} items but image file holds {count}"),
        });
    }

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = img.take(rows * cols)?;
        let label = lab.take(1)?[0] as usize;
        samples
            .push(Sample { image: Image::new(rows, cols, raw.iter().map(|&b| f64::from(b) / 255.0).collect()), label });
    }
    Ok(Dataset { samples })
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    read_idx(&ib, &lb)
}

fn to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a dataset as (image file bytes, label file bytes).
///
/// Pixels are rounded to the nearest of 256 levels. All images must share
/// one size and labels must fit in a byte.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = dataset.samples.first().map(|s| (s.image.height, s.image.width)).unwrap_or((0, 0));
    let count = u32::try_from(dataset.len()).map_err(|_| Error::argument("too many samples for IDX"))?;
    let mut images = Vec::with_capacity(16 + dataset.len() * rows * cols);
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&count.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&count.to_be_bytes());
    for s in &dataset.samples {
        if (s.image.height, s.image.width) != (rows, cols) {
            return Err(Error::shape("IDX images must share one size"));
        }
        let label =
            u8::try_from(s.label).map_err(|_| Error::argument(format!("label {} does not fit in a byte", s.label)))?;
        images.extend(s.image.pixels.iter().map(|&p| to_byte(p)));
        labels.push(label);
    }
    Ok((images, labels))
}

pub fn write_idx(dataset: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (ib, lb) = encode_idx(dataset)?;
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    fs::write(ip, ib).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lb).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn empty_files_give_empty_dataset() {
        let ds = read_idx(&header(IMAGES_MAGIC, &[0, 28, 28]), &header(LABELS_MAGIC, &[0])).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn bytes_scale_to_unit_interval() {
        let mut images = header(IMAGES_MAGIC, &[1, 2, 2]);
        images.extend_from_slice(&[0, 255, 128, 64]);
        let mut labels = header(LABELS_MAGIC, &[1]);
        labels.push(7);
        let ds = read_idx(&images, &labels).unwrap();
        let px = &ds.samples[0].image.pixels;
        assert_eq!(ds.samples[0].label, 7);
        assert_eq!(px[0], 0.0);
        assert_eq!(px[1], 1.0);
        assert!((px[2] - 0.502).abs() < 1e-3);
        assert!((px[3] - 0.251).abs() < 1e-3);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let mut images = header(IMAGES_MAGIC, &[1, 1, 1]);
        images.push(3);
        let labels = header(LABELS_MAGIC, &[2]);
        let err = read_idx(&images, &labels).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation() {
        let labels = header(LABELS_MAGIC, &[1]);
        let err = read_idx(&header(0x0000_0802, &[1, 1, 1]), &labels).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));

        let truncated = header(IMAGES_MAGIC, &[1, 2, 2]);
        let mut labels = labels;
        labels.push(0);
        let err = read_idx(&truncated, &labels).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 16, .. }), "{err}");
        assert!(read_idx(&IMAGES_MAGIC.to_be_bytes()[..3], &labels).is_err());
    }

    #[test]
    fn encode_then_read_round_trips_bytes() {
        let mut images = header(IMAGES_MAGIC, &[2, 1, 3]);
        images.extend_from_slice(&[0, 1, 2, 253, 254, 255]);
        let mut labels = header(LABELS_MAGIC, &[2]);
        labels.extend_from_slice(&[4, 9]);
        let ds = read_idx(&images, &labels).unwrap();
        let (ib, lb) = encode_idx(&ds).unwrap();
        assert_eq!(ib, images);
        assert_eq!(lb, labels);
    }
}
