//! Checkpoint container.
//!
//! ```text
//! "FMCK" | version u16 | manifest length u32 | JSON manifest | tensor data
//! ```
//!
//! The manifest records the model and training configuration, the datasets
//! the model was trained on, and for every tensor its name, shape, dtype and
//! byte offset into the data section. Tensor data is `f64` little-endian,
//! row-major.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::read_file;
use crate::autoencoder::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::simulator::Standardization;
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FMCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const PREFIX_LEN: usize = 4 + 2 + 4;
const DTYPE: &str = "f64";

/// One dataset the model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedOn {
    pub name: String,
    pub fingerprint: String,
    pub samples: usize,
    pub stats: Standardization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub steps_completed: usize,
    pub datasets: Vec<TrainedOn>,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    /// Whether a dataset with this config fingerprint was used in training.
    pub fn trained_on(&self, fingerprint: &str) -> bool {
        self.datasets.iter().any(|d| d.fingerprint == fingerprint)
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, train: TrainConfig, steps_completed: usize, datasets: Vec<TrainedOn>) -> Self {
        let mut offset = 0;
        let tensors = model
            .params
            .names()
            .iter()
            .zip(model.params.tensors())
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                    dtype: DTYPE.into(),
                    offset,
                };
                offset += 8 * t.len();
                e
            })
            .collect();
        Self {
            manifest: CheckpointManifest {
                model: model.config,
                train,
                steps_completed,
                datasets,
                tensors,
            },
            model,
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let manifest = serde_json::to_vec(&ckpt.manifest).expect("manifest serializes");
    let data_len: usize = ckpt.model.params.scalar_count() * 8;
    let mut out = Vec::with_capacity(PREFIX_LEN + manifest.len() + data_len);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in ckpt.model.params.tensors() {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let data_start = PREFIX_LEN
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("manifest runs past end of file".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[PREFIX_LEN..data_start])
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    manifest.model.validate()?;
    let data = &bytes[data_start..];
    let mut expected_offset = 0usize;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.dtype != DTYPE {
            return Err(Error::Format(format!("tensor {:?} has dtype {:?}, expected f64", e.name, e.dtype)));
        }
        if e.offset != expected_offset {
            return Err(Error::Format(format!("tensor {:?} offset {} is not contiguous", e.name, e.offset)));
        }
        let len = e.shape[0]
            .checked_mul(e.shape[1])
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("tensor {:?} shape overflows", e.name)))?;
        let end = e
            .offset
            .checked_add(len)
            .filter(|&end| end <= data.len())
            .ok_or_else(|| Error::Format(format!("tensor {:?} runs past end of file", e.name)))?;
        let values: Vec<f64> = data[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = Array2::from_shape_vec((e.shape[0], e.shape[1]), values).expect("length checked");
        tensors.push((e.name.clone(), arr));
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            data.len() - expected_offset
        )));
    }
    let model = Model::from_tensors(manifest.model, tensors)?;
    Ok(Checkpoint { manifest, model })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}
