use std::fs;
use std::path::Path;

use mrlmc_core::ExperimentConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Parse and validate an experiment config. Missing keys take their
/// defaults, unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}
