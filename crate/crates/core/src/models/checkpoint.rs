//! Checkpoints: a JSON manifest next to a flat little-endian `f64` array.
//!
//! The binary holds every parameter in declaration order, followed by the
//! running mean and variance of each batch-norm layer.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GnnModel, ModelConfig};
use crate::error::{BgnnError, Result};

pub const CHECKPOINT_FORMAT: &str = "bgnn-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    pub bn_dims: Vec<usize>,
    /// File name of the parameter array, relative to the manifest.
    pub data_file: String,
}

fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>` with extension `.bin`.
pub fn save_checkpoint(model: &GnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bin = data_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config().clone(),
        seed: model.seed(),
        params: model
            .param_names()
            .iter()
            .zip(model.params())
            .map(|(n, p)| ParamEntry {
                name: n.clone(),
                shape: p.shape().to_vec(),
            })
            .collect(),
        bn_dims: model.bn_running().iter().map(|b| b.mean.len()).collect(),
        data_file: bin
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut bytes = Vec::with_capacity(model.n_parameters() * 8);
    for p in model.params() {
        for v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for b in model.bn_running() {
        for v in b.mean.iter().chain(&b.var) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| BgnnError::contract(e.to_string()))?;
    fs::write(&bin, bytes).map_err(|e| BgnnError::io(&bin, e))?;
    fs::write(path, json).map_err(|e| BgnnError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GnnModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| BgnnError::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| BgnnError::format(path, Some(e.line()), e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(BgnnError::format(path, None, format!("unknown format `{}`", manifest.format)));
    }
    let bin = path.parent().unwrap_or(Path::new(".")).join(&manifest.data_file);
    let bytes = fs::read(&bin).map_err(|e| BgnnError::io(&bin, e))?;
    let mut model = GnnModel::new(manifest.config.clone(), manifest.seed)?;

    let shapes_match = model.params().len() == manifest.params.len()
        && model
            .params()
            .iter()
            .zip(&manifest.params)
            .all(|(p, e)| p.shape() == e.shape.as_slice());
    let bn_match = model.bn_running().iter().map(|b| b.mean.len()).eq(manifest.bn_dims.iter().copied());
    if !shapes_match || !bn_match {
        return Err(BgnnError::format(path, None, "parameter shapes disagree with the config"));
    }
    let expected = model.n_parameters() + 2 * manifest.bn_dims.iter().sum::<usize>();
    if bytes.len() != expected * 8 {
        return Err(BgnnError::format(
            &bin,
            None,
            format!("{} bytes, expected {}", bytes.len(), expected * 8),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")));
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = values.next().expect("length checked");
        }
    }
    for b in model.bn_running_mut() {
        for v in b.mean.iter_mut().chain(b.var.iter_mut()) {
            *v = values.next().expect("length checked");
        }
    }
    Ok(model)
}
