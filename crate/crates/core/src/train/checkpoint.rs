//! Checkpoint files.
//!
//! Layout: 8 magic bytes, a little-endian `u32` format version, a
//! little-endian `u64` manifest length, the JSON manifest, then every
//! parameter array as contiguous little-endian `f64` values in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{param_layout, Model, ModelConfig};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"TBL2SEQ\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub vocab: Vocabulary,
    pub attributes: Vocabulary,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
}

pub fn encode_checkpoint(model: &Model, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let mut arrays = Vec::with_capacity(model.params.len());
    let mut offset = 0;
    for (_, p) in model.params.iter() {
        arrays.push(ArrayEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
            len: p.tensor.len(),
        });
        offset += p.tensor.len();
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        model: model.config,
        train: train.cloned(),
        vocab: model.vocab.clone(),
        attributes: model.attributes.clone(),
        arrays,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.params.iter() {
        for v in p.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} byte header", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let rest = &bytes[HEADER_LEN..];
    let manifest_len = usize::try_from(manifest_len)
        .ok()
        .filter(|&n| n <= rest.len())
        .ok_or_else(|| Error::Truncated(format!("manifest of {manifest_len} bytes, {} available", rest.len())))?;
    let manifest: Manifest = serde_json::from_slice(&rest[..manifest_len])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.version != version {
        return Err(Error::Format(format!(
            "manifest version {} disagrees with header version {version}",
            manifest.version
        )));
    }
    manifest.model.validate()?;
    let payload = &rest[manifest_len..];

    let expected = param_layout(&manifest.model, manifest.vocab.len(), manifest.attributes.len());
    if expected.len() != manifest.arrays.len() {
        return Err(Error::Format(format!(
            "{} arrays stored, model has {}",
            manifest.arrays.len(),
            expected.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.arrays) {
        if entry.name != *name {
            return Err(Error::Format(format!("expected array {name}, found {}", entry.name)));
        }
        if entry.shape != *shape {
            return Err(Error::ParamShape {
                name: entry.name.clone(),
                stored: entry.shape.clone(),
                expected: shape.clone(),
            });
        }
    }
    let total: usize = manifest.arrays.iter().map(|a| a.len).sum();
    if payload.len() < 8 * total {
        return Err(Error::Truncated(format!(
            "payload has {} bytes, manifest needs {}",
            payload.len(),
            8 * total
        )));
    }
    if payload.len() > 8 * total {
        return Err(Error::Format("trailing bytes after payload".into()));
    }

    let mut tensors = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.into_iter().zip(&manifest.arrays) {
        let numel: usize = shape.iter().product();
        if entry.len != numel || entry.offset + entry.len > total {
            return Err(Error::Format(format!("bad directory entry for {name}")));
        }
        let values = payload[8 * entry.offset..8 * (entry.offset + entry.len)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor::new(shape, values)?));
    }
    Ok(Checkpoint {
        model: Model::from_tensors(manifest.model, manifest.vocab, manifest.attributes, tensors),
        train: manifest.train,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, train: Option<&TrainConfig>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model, train)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
