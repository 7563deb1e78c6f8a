//! Model archives: `model.safetensors` holding every parameter and buffer,
//! plus a `checkpoint.json` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{Module, Param};

pub const SCHEMA_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const SIDECAR_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Steps completed; every per-step stream derives from `(seed, step)`.
    pub global_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub model_config: ModelConfig,
    pub epoch: usize,
    pub rng_state: RngState,
    pub manifest_hash: String,
}

fn collect_tensors(model: &mut Model<f32>) -> BTreeMap<String, ArrayD<f32>> {
    let mut out = BTreeMap::new();
    model.for_each_param(&mut |name, p: &mut Param<f32>| {
        out.insert(name.to_string(), p.value.as_standard_layout().into_owned());
    });
    model.for_each_buffer(&mut |name, b| {
        out.insert(name.to_string(), b.as_standard_layout().into_owned());
    });
    out
}

fn le_bytes(a: &ArrayD<f32>) -> Vec<u8> {
    a.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_checkpoint(model: &mut Model<f32>, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = collect_tensors(model);
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, v)| (k.clone(), v.shape().to_vec(), le_bytes(v)))
        .collect();
    let views = bytes
        .iter()
        .map(|(k, shape, data)| {
            TensorView::new(Dtype::F32, shape.clone(), data)
                .map(|v| (k.as_str(), v))
                .map_err(|e| Error::Serde(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let blob = safetensors::serialize(views, None).map_err(|e| Error::Serde(e.to_string()))?;
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, blob).map_err(|e| Error::io(&weights, e))?;
    let sidecar = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
}

pub fn read_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    let sidecar = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Serde(format!("{}: {e}", sidecar.display())))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "checkpoint schema {} is not supported (expected {SCHEMA_VERSION})",
            meta.schema_version
        )));
    }
    meta.model_config.validate()?;
    Ok(meta)
}

/// Restores a model. With `expected`, the stored configuration must match.
pub fn load_checkpoint(
    dir: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(Model<f32>, CheckpointMeta)> {
    let meta = read_checkpoint_meta(dir)?;
    if let Some(cfg) = expected {
        if cfg != &meta.model_config {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different model configuration",
                dir.display()
            )));
        }
    }
    let weights = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    let archive = SafeTensors::deserialize(&blob)
        .map_err(|e| Error::Serde(format!("{}: {e}", weights.display())))?;
    let mut model = Model::new(meta.model_config.clone(), 0)?;
    let mut failure: Option<Error> = None;
    let mut restore = |name: &str, target: &mut ArrayD<f32>| {
        if failure.is_some() {
            return;
        }
        match read_tensor(&archive, name, target.shape()) {
            Ok(a) => *target = a,
            Err(e) => failure = Some(e),
        }
    };
    model.for_each_param(&mut |name, p: &mut Param<f32>| restore(name, &mut p.value));
    model.for_each_buffer(&mut |name, b| restore(name, b));
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((model, meta))
}

fn read_tensor(archive: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<ArrayD<f32>> {
    let view = archive
        .tensor(name)
        .map_err(|_| Error::Data(format!("checkpoint lacks tensor `{name}`")))?;
    if view.dtype() != Dtype::F32 || view.shape() != shape {
        return Err(Error::Data(format!(
            "tensor `{name}` is {:?} {:?}, expected F32 {shape:?}",
            view.dtype(),
            view.shape()
        )));
    }
    let values = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ArrayD::from_shape_vec(shape.to_vec(), values).map_err(|e| Error::Shape(e.to_string()))
}
