//! Model checkpoint: `DUGM1`, a `u64` header length, a JSON header with the
//! network configuration and a tensor directory, then `f32` tensor data.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelDims, ModelParams, NetConfig};

pub const MODEL_MAGIC: &[u8; 5] = b"DUGM1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint format: {0}")]
    Version(String),
    #[error("tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    Shape { tensor: String, expected: (usize, usize), found: (usize, usize) },
    #[error("configuration mismatch: {0}")]
    Config(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
    /// Index of the first value within the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    net_config: NetConfig,
    dims: ModelDims,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(params: &ModelParams, cfg: &NetConfig, dims: ModelDims) -> Vec<u8> {
    let named = params.map(|name, t| (name.to_string(), t)).into_vec();
    let mut offset = 0;
    let tensors = named
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: t.dim(), offset };
            offset += t.len();
            e
        })
        .collect();
    let header = Header { net_config: cfg.clone(), dims, tensors };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(13 + json.len() + 4 * offset);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for &x in t.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, NetConfig, ModelDims), CheckpointError> {
    if bytes.len() < 5 || &bytes[..5] != MODEL_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(5)]).into_owned();
        return Err(CheckpointError::Version(format!("expected DUGM1, found {found:?}")));
    }
    let len_bytes = bytes.get(5..13).ok_or_else(|| CheckpointError::Corrupt("truncated header length".into()))?;
    let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
    let json = 13usize
        .checked_add(len)
        .and_then(|end| bytes.get(13..end))
        .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    header.net_config.validate().map_err(CheckpointError::Config)?;
    let data = &bytes[13 + len..];
    if !data.len().is_multiple_of(4) {
        return Err(CheckpointError::Corrupt("data section is not a whole number of f32 values".into()));
    }
    let values: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();

    let template = ModelParams::init(&header.net_config, header.dims).zeros_like();
    let names = template.names();
    if names.len() != header.tensors.len() {
        return Err(CheckpointError::Corrupt(format!(
            "directory lists {} tensors, configuration implies {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut expected_end = 0;
    for (name, entry) in names.iter().zip(&header.tensors) {
        if &entry.name != name {
            return Err(CheckpointError::Corrupt(format!("expected tensor {name}, found {}", entry.name)));
        }
        if entry.offset != expected_end {
            return Err(CheckpointError::Corrupt(format!("tensor {name} has offset {}", entry.offset)));
        }
        expected_end += entry.shape.0 * entry.shape.1;
    }
    if expected_end != values.len() {
        return Err(CheckpointError::Corrupt(format!(
            "directory covers {expected_end} values, data has {}",
            values.len()
        )));
    }

    let mut entries = header.tensors.iter();
    let mut error = None;
    let params = template.map(|name, t| {
        let entry = entries.next().expect("lengths checked");
        if entry.shape != t.dim() && error.is_none() {
            error = Some(CheckpointError::Shape { tensor: name.to_string(), expected: t.dim(), found: entry.shape });
        }
        let slice = &values[entry.offset..entry.offset + entry.shape.0 * entry.shape.1];
        Array2::from_shape_fn(entry.shape, |(r, c)| f64::from(slice[r * entry.shape.1 + c]))
    });
    if let Some(e) = error {
        return Err(e);
    }
    if !params.all_finite() {
        return Err(CheckpointError::Corrupt("non-finite parameter".into()));
    }
    Ok((params, header.net_config, header.dims))
}

pub fn save_checkpoint(
    params: &ModelParams,
    cfg: &NetConfig,
    dims: ModelDims,
    path: &Path,
) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(params, cfg, dims))
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, NetConfig, ModelDims), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it against the shapes a run expects. The
/// first tensor whose shape differs is named in the error.
pub fn load_checkpoint_expecting(
    path: &Path,
    cfg: &NetConfig,
    dims: ModelDims,
) -> Result<(ModelParams, NetConfig), CheckpointError> {
    let (params, stored, stored_dims) = load_checkpoint(path)?;
    check_against(&params, cfg, dims)?;
    if stored.leaky_slope != cfg.leaky_slope {
        return Err(CheckpointError::Config(format!(
            "leaky slope {} differs from expected {}",
            stored.leaky_slope, cfg.leaky_slope
        )));
    }
    debug_assert_eq!(stored_dims, dims);
    Ok((params, stored))
}

fn check_against(params: &ModelParams, cfg: &NetConfig, dims: ModelDims) -> Result<(), CheckpointError> {
    let expected = ModelParams::init(cfg, dims).zeros_like();
    let want = expected.map(|n, t| (n.to_string(), t.dim())).into_vec();
    let have = params.map(|n, t| (n.to_string(), t.dim())).into_vec();
    for ((name, e), (_, f)) in want.iter().zip(&have) {
        if e != f {
            return Err(CheckpointError::Shape { tensor: name.clone(), expected: *e, found: *f });
        }
    }
    if want.len() != have.len() {
        return Err(CheckpointError::Config(format!(
            "checkpoint has {} layers, expected {}",
            params.layers.len(),
            cfg.num_layers
        )));
    }
    Ok(())
}
