//! Model checkpoints: a magic tag, a JSON header describing the model and
//! indexing the tensors, then every tensor as little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::ModelParams;
use super::ModelConfig;
use crate::error::{OscaError, Result};

const MAGIC: &[u8; 8] = b"OSCACKP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the value blob, counted in f32 elements.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    vocab_fingerprint: String,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// Writes `params` to `path`, creating parent directories. Byte output is a
/// pure function of the parameters.
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for (name, shape, values) in params.tensors() {
        entries.push(TensorEntry {
            name,
            shape,
            offset,
            len: values.len() as u64,
        });
        for &v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += values.len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        model: params.config().clone(),
        vocab_fingerprint: params.vocab_fingerprint().to_string(),
        seed: params.seed(),
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back into full parameters (values at f32 precision).
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(OscaError::Format(format!(
            "{}: too short to be a checkpoint ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(OscaError::Format(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| {
            OscaError::Format(format!(
                "{}: header length {header_len} exceeds file size {}",
                path.display(),
                bytes.len()
            ))
        })? as usize;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| OscaError::Format(format!("{}: invalid header: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(OscaError::Format(format!(
            "{}: unsupported format version {} (this build reads {FORMAT_VERSION})",
            path.display(),
            header.format_version
        )));
    }
    let blob = &bytes[header_end..];

    let mut params = ModelParams::zeros(header.model, &header.vocab_fingerprint, header.seed)?;
    let mut tensors = params.tree_mut().tensors_mut();
    if tensors.len() != header.tensors.len() {
        return Err(OscaError::Format(format!(
            "{}: header indexes {} tensors, model shape has {}",
            path.display(),
            header.tensors.len(),
            tensors.len()
        )));
    }
    let total: u64 = header.tensors.iter().map(|t| t.len).sum();
    if blob.len() as u64 != total.checked_mul(4).unwrap_or(u64::MAX) {
        return Err(OscaError::Format(format!(
            "{}: value blob has {} bytes, header promises {}",
            path.display(),
            blob.len(),
            total * 4
        )));
    }
    for (entry, (name, shape, values)) in header.tensors.iter().zip(tensors.iter_mut()) {
        if entry.name != *name {
            return Err(OscaError::Format(format!(
                "{}: tensor order mismatch: file has '{}', model expects '{}'",
                path.display(),
                entry.name,
                name
            )));
        }
        if entry.shape != *shape {
            return Err(OscaError::Format(format!(
                "{}: tensor '{}' has shape {:?} in the file but {:?} in the model",
                path.display(),
                entry.name,
                entry.shape,
                shape
            )));
        }
        if entry.len as usize != values.len() {
            return Err(OscaError::Format(format!(
                "{}: tensor '{}' length {} disagrees with its shape ({})",
                path.display(),
                entry.name,
                entry.len,
                values.len()
            )));
        }
        let start = entry
            .offset
            .checked_mul(4)
            .filter(|&s| s + entry.len * 4 <= blob.len() as u64)
            .ok_or_else(|| {
                OscaError::Format(format!(
                    "{}: tensor '{}' offset {} out of range",
                    path.display(),
                    entry.name,
                    entry.offset
                ))
            })? as usize;
        for (i, slot) in values.iter_mut().enumerate() {
            let at = start + 4 * i;
            let raw: [u8; 4] = blob[at..at + 4].try_into().unwrap();
            *slot = f32::from_le_bytes(raw) as f64;
        }
    }
    Ok(params)
}
