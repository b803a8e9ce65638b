//! Model checkpoints.
//!
//! Layout: 8-byte magic, little-endian u64 header length, a JSON header
//! (architecture, parameter count, tensor directory, metadata), then the raw
//! little-endian f32 payload. Values round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::densenet::{ArchitectureConfig, DenseNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NPDENSE1";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureConfig,
    param_count: usize,
    stats_tracked: u64,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &DenseNet<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut payload: Vec<f32> = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, values: &[f32]| {
        tensors.push(TensorEntry { name, shape, offset: payload.len(), len: values.len() });
        payload.extend_from_slice(values);
    };
    for (name, p) in model.named_params() {
        push(name, p.shape.clone(), &p.value);
    }
    for (name, b) in model.named_buffers() {
        push(name, vec![b.len()], &b);
    }
    let header = Header {
        architecture: model.config.clone(),
        param_count: model.param_count(),
        stats_tracked: model.stats_tracked(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(DenseNet<f32>, CheckpointMeta)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let data = &bytes[16 + hlen..];
    if !data.len().is_multiple_of(4) {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let payload: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();

    let mut model = DenseNet::<f32>::build(header.architecture.clone(), 0)?;
    if model.param_count() != header.param_count {
        return Err(Error::Checkpoint(format!(
            "architecture builds {} parameters, header says {}",
            model.param_count(),
            header.param_count
        )));
    }
    let mut tensors = header.tensors.iter();
    let mut take = |name: &str, shape: &[usize]| -> Result<&[f32]> {
        let t = tensors.next().ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.name != name || t.shape != shape || t.len != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("tensor {} {:?} does not match {name} {shape:?}", t.name, t.shape)));
        }
        payload.get(t.offset..t.offset + t.len).ok_or_else(|| Error::Checkpoint(format!("tensor {name} out of range")))
    };
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in names.iter().zip(model.params_mut()) {
        let shape = p.shape.clone();
        p.value.copy_from_slice(take(name, &shape)?);
    }
    let mut buffers = Vec::new();
    for (name, b) in model.named_buffers() {
        buffers.push(take(&name, &[b.len()])?.to_vec());
    }
    if tensors.next().is_some() {
        return Err(bad("unexpected extra tensors"));
    }
    model.set_buffers(buffers, header.stats_tracked)?;
    Ok((model, header.meta))
}

pub fn save(model: &DenseNet<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(DenseNet<f32>, CheckpointMeta)> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
