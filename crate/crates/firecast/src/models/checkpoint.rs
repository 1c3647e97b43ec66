//! Checkpoint archive: all parameters as float32 plus the model config.
//!
//! Layout: magic `FCKP`, u32 LE format version, u32 LE header length, a JSON
//! header (`format_version`, `config`, `tensors` with per-tensor `name`,
//! `shape`, element `offset` and `len`), then the concatenated float32 LE
//! tensor data in row-major order.

use ndarray::NdFloat;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{FireModel, ModelConfig, ModelError};

const MAGIC: &[u8; 4] = b"FCKP";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element (not byte) offset into the data section.
    offset: u64,
    len: u64,
}

/// Which parameters a partial load touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub matched: Vec<String>,
    /// Names present in the file but absent from the model.
    pub unmatched_file: Vec<String>,
    /// Model parameters the file did not provide.
    pub unmatched_model: Vec<String>,
}

fn io_err(action: &'static str, path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io { action, path: path.to_path_buf(), source }
}

fn format_err(path: &Path, detail: impl Into<String>) -> ModelError {
    ModelError::CheckpointFormat { path: path.to_path_buf(), detail: detail.into() }
}

fn write_filtered<F: NdFloat>(
    model: &FireModel<F>,
    path: &Path,
    keep: impl Fn(&str) -> bool,
) -> Result<(), ModelError> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for (name, view) in model.named_params() {
        if !keep(&name) {
            continue;
        }
        let len = view.len() as u64;
        tensors.push(TensorEntry { name, shape: view.shape().to_vec(), offset, len });
        for v in view.iter() {
            data.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
        }
        offset += len;
    }
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| format_err(path, format!("header serialization: {e}")))?;
    let mut bytes = Vec::with_capacity(12 + header_json.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&data);
    std::fs::write(path, bytes).map_err(|e| io_err("write", path, e))
}

/// Saves every parameter.
pub fn save_checkpoint<F: NdFloat>(model: &FireModel<F>, path: &Path) -> Result<(), ModelError> {
    write_filtered(model, path, |_| true)
}

/// Saves only the parameters whose dot-separated name passes `keep`,
/// e.g. `|n| n.starts_with("encoder.")` for an encoder-only checkpoint.
pub fn save_partial<F: NdFloat>(
    model: &FireModel<F>,
    path: &Path,
    keep: impl Fn(&str) -> bool,
) -> Result<(), ModelError> {
    write_filtered(model, path, keep)
}

fn read_archive(path: &Path) -> Result<(Header, Vec<f32>), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| io_err("read", path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(format_err(path, "missing FCKP magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let data_start = 12 + header_len;
    if bytes.len() < data_start {
        return Err(format_err(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..data_start])
        .map_err(|e| format_err(path, format!("header parse: {e}")))?;
    let blob = &bytes[data_start..];
    if blob.len() % 4 != 0 {
        return Err(format_err(path, "data section is not whole float32 words"));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    for t in &header.tensors {
        let end = t.offset + t.len;
        if end as usize > values.len() || t.shape.iter().product::<usize>() as u64 != t.len {
            return Err(format_err(path, format!("tensor `{}` extent out of bounds", t.name)));
        }
    }
    Ok((header, values))
}

/// Copies file tensors into matching parameters by name; unmatched names on
/// either side are reported, not errors. Shape disagreement on a matched
/// name is an error.
pub fn load_into<F: NdFloat>(model: &mut FireModel<F>, path: &Path) -> Result<LoadReport, ModelError> {
    let (header, values) = read_archive(path)?;
    let mut params = model.named_params_mut();
    let mut matched = Vec::new();
    let mut unmatched_file = Vec::new();
    let mut touched = vec![false; params.len()];
    for entry in &header.tensors {
        match params.iter().position(|(n, _)| n == &entry.name) {
            None => unmatched_file.push(entry.name.clone()),
            Some(i) => {
                let view = &mut params[i].1;
                if view.shape() != entry.shape.as_slice() {
                    return Err(ModelError::ShapeMismatch {
                        name: entry.name.clone(),
                        expected: view.shape().to_vec(),
                        found: entry.shape.clone(),
                    });
                }
                let src = &values[entry.offset as usize..(entry.offset + entry.len) as usize];
                for (dst, &v) in view.iter_mut().zip(src) {
                    *dst = F::from(v).unwrap();
                }
                touched[i] = true;
                matched.push(entry.name.clone());
            }
        }
    }
    let unmatched_model = params
        .iter()
        .zip(&touched)
        .filter(|(_, &t)| !t)
        .map(|((n, _), _)| n.clone())
        .collect();
    Ok(LoadReport { matched, unmatched_file, unmatched_model })
}

/// Rebuilds a model from a full checkpoint; errors if any parameter is
/// missing from the file.
pub fn load_checkpoint(path: &Path) -> Result<FireModel<f32>, ModelError> {
    let (header, _) = read_archive(path)?;
    let mut model = FireModel::<f32>::from_seed(header.config, 0)?;
    let report = load_into(&mut model, path)?;
    if !report.unmatched_model.is_empty() {
        return Err(format_err(
            path,
            format!("partial checkpoint, missing {} tensors (e.g. `{}`)",
                report.unmatched_model.len(), report.unmatched_model[0]),
        ));
    }
    Ok(model)
}
