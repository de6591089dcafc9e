//! Checkpoints: raw little-endian f64 weights plus a JSON manifest that
//! records the architecture and where each tensor lives in the blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{PolicyConfig, PolicyParams};
use crate::error::{CoeError, Result};

const FORMAT: &str = "coe-policy";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements, not bytes.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: PolicyConfig,
    pub tensors: Vec<TensorEntry>,
    pub checksum: String,
}

impl CheckpointManifest {
    pub fn describe(params: &PolicyParams) -> Self {
        let mut offset = 0;
        let tensors = params
            .names()
            .into_iter()
            .zip(params.shapes())
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let e = TensorEntry {
                    name,
                    shape,
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        CheckpointManifest {
            format: FORMAT.into(),
            version: VERSION,
            config: params.config,
            tensors,
            checksum: params.checksum(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &CheckpointManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text).map_err(|e| CoeError::io(path, e))
}

/// `step_5.bin` → `step_5.manifest.json`.
pub fn manifest_path(weights: &Path) -> PathBuf {
    weights.with_extension("manifest.json")
}

/// Writes the weights to `path` and the manifest next to it.
pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<CheckpointManifest> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CoeError::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(params.num_params() * 8);
    for t in params.tensors() {
        for x in t {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| CoeError::io(path, e))?;
    let manifest = CheckpointManifest::describe(params);
    write_manifest(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| CoeError::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(CoeError::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    manifest.config.validate()?;
    let mut params = PolicyParams::zeros(manifest.config);
    let expected = CheckpointManifest::describe(&params).tensors;
    if expected.len() != manifest.tensors.len()
        || expected
            .iter()
            .zip(&manifest.tensors)
            .any(|(a, b)| a.name != b.name || a.shape != b.shape)
    {
        return Err(CoeError::Checkpoint("tensor layout does not match config".into()));
    }

    let bytes = fs::read(path).map_err(|e| CoeError::io(path, e))?;
    if bytes.len() != params.num_params() * 8 {
        return Err(CoeError::Checkpoint(format!(
            "weights file has {} bytes, expected {}",
            bytes.len(),
            params.num_params() * 8
        )));
    }
    for (entry, dst) in manifest.tensors.iter().zip(params.tensors_mut()) {
        let src = &bytes[entry.offset * 8..(entry.offset + entry.len) * 8];
        for (x, chunk) in dst.iter_mut().zip(src.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if params.checksum() != manifest.checksum {
        return Err(CoeError::Checkpoint("checksum mismatch".into()));
    }
    Ok(params)
}
