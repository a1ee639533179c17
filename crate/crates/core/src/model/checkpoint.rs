//! Self-describing checkpoint files.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, UTF-8 JSON
//! header, then every tensor as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GCBLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub parameters: BTreeMap<String, TensorEntry>,
}

pub fn checkpoint_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut parameters = BTreeMap::new();
    let mut payload = Vec::new();
    for (_, p) in model.params.iter() {
        parameters.insert(
            p.name.clone(),
            TensorEntry {
                dtype: "f32".into(),
                shape: p.value.shape().to_vec(),
                offset: payload.len(),
                trainable: p.trainable,
            },
        );
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model_config: model.config().clone(),
        parameters,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[16..end])?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let header: CheckpointHeader = serde_json::from_value(value)?;
    Ok((header, &bytes[end..]))
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    split_header(&bytes).map(|(h, _)| h)
}

/// Decodes a checkpoint. With `expected` set, the stored architecture must
/// match it exactly.
pub fn checkpoint_from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model<f32>> {
    let (header, payload) = split_header(bytes)?;
    if let Some(want) = expected {
        if let Some(field) = want.first_difference(&header.model_config) {
            return Err(Error::Checkpoint(format!(
                "model_config mismatch in field '{field}'"
            )));
        }
    }
    let mut model = Model::<f32>::new(&header.model_config, 0)?;
    for name in header.parameters.keys() {
        if model.params.id(name).is_none() {
            return Err(Error::Checkpoint(format!("unknown parameter '{name}'")));
        }
    }
    let mut expected_len = 0;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let (name, shape, trainable) = {
            let p = model.params.get(id);
            (p.name.clone(), p.value.shape().to_vec(), p.trainable)
        };
        let e = header
            .parameters
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!("{name}: unsupported dtype '{}'", e.dtype)));
        }
        if e.shape != shape || e.trainable != trainable {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {:?} does not match {:?}",
                e.shape, shape
            )));
        }
        let n: usize = shape.iter().product();
        let end = e.offset + 4 * n;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "truncated payload: '{name}' needs bytes {}..{end}, file has {}",
                e.offset,
                payload.len()
            )));
        }
        let data = payload[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        model.params.set(id, Tensor::from_vec(&shape, data)?)?;
        expected_len += 4 * n;
    }
    if payload.len() != expected_len {
        return Err(Error::Checkpoint(format!(
            "payload has {} bytes, expected {expected_len}",
            payload.len()
        )));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, expected)
}
