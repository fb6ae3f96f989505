//! Checkpoint serialization.
//!
//! Layout: the magic bytes `GCUN`, a little-endian `u32` format version, a
//! length-prefixed JSON header (model config echo plus a tensor directory
//! with offsets into the payload), then the raw tensor payload as
//! little-endian `f32`. Weights are stored in f32 regardless of the training
//! precision; round trips preserve the exact bit pattern.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GCUN";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 units.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    step: u64,
    final_loss: f64,
    tensors: Vec<TensorEntry>,
}

/// A trained model with its provenance.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Optimizer steps taken before the save.
    pub step: u64,
    /// Training loss at the last step.
    pub final_loss: f64,
    pub params: ParamSet<f32>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes a checkpoint; parent directories must exist.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0usize;
    for (name, t) in ckpt.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let header = Header {
        model: ckpt.model.clone(),
        step: ckpt.step,
        final_loss: ckpt.final_loss,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut file = std::fs::File::create(path)?;
    file.write_all(&MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (_, t) in ckpt.params.iter() {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a checkpoint back, validating magic, version and payload size.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| format_err(path, "file too short for magic"))?;
    if magic != MAGIC {
        return Err(format_err(path, format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)
        .map_err(|_| format_err(path, "file too short for version"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut len8 = [0u8; 8];
    file.read_exact(&mut len8)
        .map_err(|_| format_err(path, "file too short for header length"))?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| format_err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| format_err(path, format!("malformed header: {e}")))?;

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != total * 4 {
        return Err(format_err(
            path,
            format!(
                "payload holds {} bytes, directory expects {}",
                payload.len(),
                total * 4
            ),
        ));
    }

    let mut params = ParamSet::new();
    for entry in &header.tensors {
        let expect: usize = entry.shape.iter().product();
        if expect != entry.len {
            return Err(format_err(
                path,
                format!("tensor {} shape/len mismatch", entry.name),
            ));
        }
        let start = entry.offset * 4;
        let end = start + entry.len * 4;
        if end > payload.len() {
            return Err(format_err(
                path,
                format!("tensor {} overruns the payload", entry.name),
            ));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.insert(&entry.name, Tensor::from_parts(&entry.shape, data));
    }
    Ok(Checkpoint {
        model: header.model,
        step: header.step,
        final_loss: header.final_loss,
        params,
    })
}
