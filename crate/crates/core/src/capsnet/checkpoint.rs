//! Checkpoints: a JSON manifest next to a raw little-endian `f64` blob.
//! The SHA-256 of the blob is the model hash carried by chain transactions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{CapsNet, CapsNetConfig};
use crate::error::{Error, Result};
use crate::tensor::WeightTensor;

pub const CHECKPOINT_FORMAT: &str = "fedchain-capsnet-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: CapsNetConfig,
    pub seed: u64,
    pub n_params: usize,
    pub blob_sha256: String,
}

/// Lowercase hex SHA-256 of the weight blob.
pub fn model_hash(params: &WeightTensor) -> String {
    hex::encode(Sha256::digest(params.to_le_bytes()))
}

impl CapsNet {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            config: *self.config(),
            seed: self.seed(),
            n_params: self.params().len(),
            blob_sha256: model_hash(self.params()),
        }
    }

    pub fn model_hash(&self) -> String {
        model_hash(self.params())
    }
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` (blob, extension replaced).
pub fn write_checkpoint(model: &CapsNet, manifest_path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = manifest_path.as_ref();
    let manifest = model.manifest();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let blob = blob_path(path);
    fs::write(&blob, model.params().to_le_bytes()).map_err(|e| Error::io(&blob, e))?;
    Ok(manifest)
}

pub fn read_checkpoint(manifest_path: impl AsRef<Path>) -> Result<CapsNet> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format { what: "checkpoint manifest", detail: e.to_string() })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format { what: "checkpoint manifest", detail: format!("unknown format {}", manifest.format) });
    }
    let blob = blob_path(path);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.blob_sha256 {
        return Err(Error::Format { what: "checkpoint blob", detail: "sha256 mismatch".into() });
    }
    if bytes.len() != manifest.n_params * 8 {
        return Err(Error::Format { what: "checkpoint blob", detail: "length does not match n_params".into() });
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    CapsNet::from_params(manifest.config, WeightTensor::from_vec(data)?, manifest.seed)
}
