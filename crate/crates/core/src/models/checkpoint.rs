use std::fs;
use std::path::Path;

use diffcore::nn::{BATCHNORM_EPS, BATCHNORM_MOMENTUM};
use diffcore::Tensor;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelShape, Net};
use crate::{MmrecError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct InitScheme {
    linear: String,
    bias: String,
    embedding: String,
}

#[derive(Serialize, Deserialize)]
struct BatchNormInfo {
    placement: String,
    momentum: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    config: ModelConfig,
    shape: ModelShape,
    init: InitScheme,
    batchnorm: BatchNormInfo,
    tensors: Vec<TensorEntry>,
}

const POPULARITY: &str = "popularity.counts";

/// Every stored tensor in header order: parameters, batchnorm running
/// statistics, then popularity counts.
fn collect(model: &mut Model<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out: Vec<(String, Tensor<f32>)> = model
        .store
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
    for mlp in model.net.mlps_mut() {
        for bn in mlp.norms() {
            let stem = names[bn.gamma.index()].trim_end_matches(".gamma").to_string();
            out.push((format!("{stem}.running_mean"), bn.running_mean.clone()));
            out.push((format!("{stem}.running_var"), bn.running_var.clone()));
        }
    }
    let n_users = model.net.shape.n_users as f64;
    let counts: Vec<f32> = model
        .net
        .popularity
        .iter()
        .map(|p| (p * n_users).round() as f32)
        .collect();
    out.push((POPULARITY.into(), Tensor::vector(counts)));
    out
}

pub fn save_checkpoint(model: &mut Model<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MmrecError::io(dir, e))?;
    let tensors = collect(model);
    let header = Header {
        version: CHECKPOINT_VERSION,
        seed: model.net.seed,
        config: model.net.config.clone(),
        shape: model.net.shape.clone(),
        init: InitScheme {
            linear: "xavier_uniform".into(),
            bias: "zeros".into(),
            embedding: "normal(0, 0.1)".into(),
        },
        batchnorm: BatchNormInfo {
            placement: "linear-batchnorm-relu".into(),
            momentum: BATCHNORM_MOMENTUM,
            eps: BATCHNORM_EPS,
        },
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut bin = Vec::new();
    for (_, t) in &tensors {
        for v in t.data() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = dir.join("params.json");
    fs::write(&json, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| MmrecError::io(&json, e))?;
    let bin_path = dir.join("params.bin");
    fs::write(&bin_path, bin).map_err(|e| MmrecError::io(&bin_path, e))
}

/// Rebuilds a model for `data` and restores the stored values.
pub fn load_checkpoint(dir: &Path, data: &crate::dataset::Dataset) -> Result<Model<f32>> {
    let json = dir.join("params.json");
    let text = fs::read_to_string(&json).map_err(|e| MmrecError::io(&json, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| MmrecError::Checkpoint(format!("{}: {e}", json.display())))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(MmrecError::Checkpoint(format!(
            "version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let (net, store) = Net::build(&header.config, data, header.shape.scenario, header.seed)?;
    if net.shape != header.shape {
        return Err(MmrecError::Checkpoint("model shape does not match the dataset".into()));
    }
    let mut model = Model { net, store };
    let bin_path = dir.join("params.bin");
    let bytes = fs::read(&bin_path).map_err(|e| MmrecError::io(&bin_path, e))?;
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
    if bytes.len() != expected {
        return Err(MmrecError::Checkpoint(format!(
            "params.bin holds {} bytes, header describes {expected}",
            bytes.len()
        )));
    }
    let template = collect(&mut model);
    if template.len() != header.tensors.len()
        || template
            .iter()
            .zip(&header.tensors)
            .any(|((n, t), e)| n != &e.name || t.shape() != e.shape.as_slice())
    {
        return Err(MmrecError::Checkpoint("tensor layout does not match the config".into()));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
    let n_params = model.store.len();
    for p in model.store.iter_mut() {
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(&take(n));
    }
    for mlp in model.net.mlps_mut() {
        for bn in mlp.norms_mut() {
            let n = bn.running_mean.numel();
            bn.running_mean.data_mut().copy_from_slice(&take(n));
            bn.running_var.data_mut().copy_from_slice(&take(n));
        }
    }
    let n_users = model.net.shape.n_users.max(1) as f64;
    model.net.popularity = take(model.net.shape.n_items)
        .into_iter()
        .map(|c| c as f64 / n_users)
        .collect();
    debug_assert!(n_params == model.store.len());
    Ok(model)
}
