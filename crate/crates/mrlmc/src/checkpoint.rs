//! Checkpoint format: `<name>.json` indexes named tensors stored back to back
//! as little-endian `f32` in `<name>.f32`, and carries the model spec and the
//! config of the run that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use mrlmc_core::model::ModelSpec;
use mrlmc_core::nn::Parameters;
use mrlmc_core::{rng, ExperimentConfig, Model};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_json, write_json};

pub const FORMAT: &str = "mrlmc-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data file, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub format: String,
    pub data: String,
    pub spec: ModelSpec,
    pub config: ExperimentConfig,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub model: Model,
    pub config: ExperimentConfig,
}

fn data_path(index_path: &Path) -> PathBuf {
    index_path.with_extension("f32")
}

/// Write `model` to `index_path` and its sibling `.f32` file.
pub fn save(index_path: &Path, model: &Model, config: &ExperimentConfig) -> Result<()> {
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    model.visit("", &mut |name, p| {
        tensors.push(TensorEntry { name: name.to_string(), shape: p.shape.clone(), offset });
        offset += p.value.len();
        bytes.extend(p.value.iter().flat_map(|&v| (v as f32).to_le_bytes()));
    });
    let data = data_path(index_path);
    let index = CheckpointIndex {
        format: FORMAT.to_string(),
        data: data.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        spec: *model.spec(),
        config: config.clone(),
        tensors,
    };
    fs::write(&data, bytes).map_err(|e| CliError::io(&data, e))?;
    write_json(index_path, &index)
}

pub fn load(index_path: &Path) -> Result<Checkpoint> {
    let index: CheckpointIndex = read_json(index_path)?;
    if index.format != FORMAT {
        return Err(CliError::Format(format!("unsupported checkpoint format {:?}", index.format)));
    }
    let data = index_path.parent().unwrap_or(Path::new(".")).join(&index.data);
    let bytes = fs::read(&data).map_err(|e| CliError::io(&data, e))?;
    if bytes.len() % 4 != 0 {
        return Err(CliError::Format(format!("{} is not a whole number of f32 values", data.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();

    // Initial values are overwritten, the seed is irrelevant.
    let mut model = Model::new(index.spec, &mut rng::derived(0, 0, 0))?;
    let mut expected = Vec::new();
    model.visit("", &mut |name, p| expected.push((name.to_string(), p.shape.clone())));
    let listed: Vec<_> = index.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    if listed != expected {
        return Err(CliError::Format(format!(
            "checkpoint tensors do not match the architecture in {}",
            index_path.display()
        )));
    }
    let mut problem = None;
    let mut i = 0;
    model.visit_mut("", &mut |name, p| {
        let t = &index.tensors[i];
        i += 1;
        match values.get(t.offset..t.offset + p.value.len()) {
            Some(src) => p.value.copy_from_slice(src),
            None => problem = Some(format!("tensor {name} extends past the end of the data file")),
        }
    });
    if let Some(msg) = problem {
        return Err(CliError::Format(msg));
    }
    Ok(Checkpoint { model, config: index.config })
}
