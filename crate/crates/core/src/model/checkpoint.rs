//! Binary checkpoint format.
//!
//! ```text
//! "KPRCKPT1"                       8 bytes
//! header length                    u64 little-endian
//! header                           JSON: config, metadata, tensor index
//! payload length                   u64 little-endian
//! payload                          f32 little-endian values
//! ```
//!
//! Each index entry holds the tensor name, shape and byte offset into the
//! payload. Parameters come first, followed by batch-norm running
//! statistics.

use std::fs;
use std::path::Path;

use conekp_tensor::nn::Module;
use conekp_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::data::write_atomic;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"KPRCKPT1";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epoch: u32,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: TrainingMetadata,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: TrainingMetadata,
    tensors: Vec<IndexEntry>,
}

fn visit_all<T: Scalar, M: Module<T>>(model: &mut M, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
    model.visit_params("", f);
    model.visit_buffers("", f);
}

impl Checkpoint {
    /// Snapshot of every parameter and buffer of `model`.
    pub fn capture<T: Scalar, M: Module<T>>(config: &ModelConfig, model: &mut M, metadata: TrainingMetadata) -> Self {
        let mut tensors = Vec::new();
        visit_all(model, &mut |name, t| {
            tensors.push(NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.values().iter().map(|v| v.as_f64() as f32).collect(),
            })
        });
        Self {
            config: config.clone(),
            metadata,
            tensors,
        }
    }

    /// Copies tensors into `model`, checking names and shapes in model order.
    pub fn apply<T: Scalar, M: Module<T>>(&self, model: &mut M) -> Result<()> {
        let mut err: Option<CheckpointError> = None;
        let mut staged: Vec<(usize, usize)> = Vec::new();
        visit_all(model, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.tensors.iter().position(|nt| nt.name == name) {
                None => err = Some(CheckpointError::MissingTensor(name)),
                Some(i) if self.tensors[i].shape != t.shape() => {
                    err = Some(CheckpointError::ShapeMismatch {
                        name,
                        expected: t.shape().to_vec(),
                        found: self.tensors[i].shape.clone(),
                    })
                }
                Some(i) => staged.push((i, staged.len())),
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        let mut k = 0;
        visit_all(model, &mut |_, t| {
            let src = &self.tensors[staged[k].0].values;
            for (d, &s) in t.values_mut().iter_mut().zip(src) {
                *d = T::lit(s as f64);
            }
            k += 1;
        });
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut index = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            index.push(IndexEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: payload.len() as u64,
            });
            for v in &t.values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            tensors: index,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let n = MAGIC.len();
        if bytes.len() < n {
            return Err(if MAGIC.starts_with(bytes) {
                CheckpointError::Truncated("file ends inside the magic bytes".into())
            } else {
                CheckpointError::BadMagic
            });
        }
        if &bytes[..n] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let read_u64 = |at: usize, what: &str| -> std::result::Result<u64, CheckpointError> {
            bytes
                .get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| CheckpointError::Truncated(format!("file ends before the {what}")))
        };
        let hlen = read_u64(n, "header length")? as usize;
        let hstart = n + 8;
        let header_bytes = bytes
            .get(hstart..hstart.saturating_add(hlen))
            .ok_or_else(|| CheckpointError::Truncated("file ends inside the header".into()))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
        let pstart = hstart + hlen + 8;
        let plen = read_u64(hstart + hlen, "payload length")? as usize;
        let available = bytes.len().saturating_sub(pstart);
        if available < plen {
            return Err(CheckpointError::Truncated(format!(
                "payload has {available} of {plen} bytes"
            )));
        }
        let payload = &bytes[pstart..pstart + plen];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start.checked_add(count * 4).filter(|&end| end <= plen).ok_or_else(|| {
                CheckpointError::CorruptHeader(format!("tensor `{}` extends past the payload", e.name))
            })?;
            let values = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                values,
            });
        }
        Ok(Self {
            config: header.config,
            metadata: header.metadata,
            tensors,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(CheckpointError::Io(e)))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}
