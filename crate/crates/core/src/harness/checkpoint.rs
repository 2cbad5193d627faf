//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 0..8 | magic `DIABLOCK` |
//! | 8..12 | format version (u32) |
//! | 12..16 | reserved, zero |
//! | u64 + bytes | run config as JSON |
//! | u64, u64 | image height and width |
//! | u32 | tensor count |
//! | per tensor | u32 name length, name, u32 rank, rank × u64 extents, f64 payload |

use std::path::Path;

use super::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Parameters;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"DIABLOCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub image_height: usize,
    pub image_width: usize,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.image_height as u64).to_le_bytes());
        out.extend_from_slice(&(self.image_width as u64).to_le_bytes());
        let params = self.model.named_parameters("");
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(format_error(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_error(
                8,
                format!("checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"),
            ));
        }
        r.u32()?;
        let json_len = r.u64()? as usize;
        let json_at = r.pos;
        let config: RunConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| format_error(json_at as u64, format!("embedded config: {e}")))?;
        let image_height = r.u64()? as usize;
        let image_width = r.u64()? as usize;
        let mut model = Model::init(&config.model, image_height, image_width, 0)
            .map_err(|e| format_error(json_at as u64, format!("embedded config does not build a model: {e}")))?;

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos as u64;
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| format_error(at, "parameter name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.filter(|&n| n <= r.remaining() / 8).ok_or_else(|| {
                format_error(r.pos as u64, format!("tensor `{name}` of shape {shape:?} exceeds the file"))
            })?;
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(shape, data).map_err(|e| format_error(at, e.to_string()))?;
            tensors.push((at, name, tensor));
        }
        if r.remaining() != 0 {
            return Err(format_error(r.pos as u64, "trailing bytes after the last tensor"));
        }

        let expected = model.named_parameters("");
        if expected.len() != tensors.len() {
            return Err(format_error(
                json_at as u64,
                format!("{} tensors stored, model has {}", tensors.len(), expected.len()),
            ));
        }
        for ((name, t), (at, stored_name, stored)) in expected.iter().zip(&tensors) {
            if name != stored_name || t.shape() != stored.shape() {
                return Err(format_error(
                    *at,
                    format!("expected `{name}` {:?}, found `{stored_name}` {:?}", t.shape(), stored.shape()),
                ));
            }
        }
        let mut next = tensors.into_iter().map(|(_, _, t)| t);
        model.visit_mut(&mut |slot| *slot = next.next().expect("counts checked"));
        Ok(Checkpoint { config, image_height, image_width, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn format_error(offset: u64, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(format_error(self.bytes.len() as u64, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
