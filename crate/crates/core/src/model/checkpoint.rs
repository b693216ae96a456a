//! Checkpoint file layout:
//!
//! ```text
//! b"SEQGENCK"            8-byte magic
//! header_len: u32 LE
//! header: JSON           { version, dtype, config, tensors: [{name, shape, offset}] }
//! blob                   tensors, row-major little-endian, offsets relative to blob start
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gpt::{GptModel, ModelConfig, ModelParameters};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SEQGENCK";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<S: Scalar>(model: &GptModel<S>) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(model.params().parameter_count() * S::BYTES);
    let mut tensors = Vec::new();
    for (name, shape, data) in model.params().tensors() {
        tensors.push(TensorEntry { name, shape, offset: blob.len() });
        for &v in data {
            v.write_le(&mut blob);
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        dtype: S::DTYPE.to_owned(),
        config: model.config().clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<GptModel<S>> {
    let err = |m: &str| Error::Checkpoint(m.to_owned());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file"));
    }
    let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let header_bytes = bytes.get(12..12 + header_len).ok_or_else(|| err("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    if header.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!("dtype {} does not match {}", header.dtype, S::DTYPE)));
    }
    header.config.validate()?;
    let blob = &bytes[12 + header_len..];
    let mut params = ModelParameters::<S>::zeros(&header.config);
    let slots = params.tensors_mut();
    if slots.len() != header.tensors.len() {
        return Err(err("tensor count does not match the config"));
    }
    let mut expected_end = 0usize;
    for ((name, data), entry) in slots.into_iter().zip(&header.tensors) {
        if name != entry.name || entry.shape.iter().product::<usize>() != data.len() {
            return Err(Error::Checkpoint(format!("tensor `{}` has an unexpected shape", entry.name)));
        }
        let end = entry.offset + data.len() * S::BYTES;
        let raw = blob.get(entry.offset..end).ok_or_else(|| err("truncated tensor data"))?;
        for (v, chunk) in data.iter_mut().zip(raw.chunks_exact(S::BYTES)) {
            *v = S::read_le(chunk);
        }
        expected_end = expected_end.max(end);
    }
    if blob.len() != expected_end {
        return Err(err("trailing bytes after tensor data"));
    }
    GptModel::new(header.config, params)
}

pub fn save_checkpoint<S: Scalar>(model: &GptModel<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<GptModel<S>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
