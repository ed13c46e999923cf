use std::io;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mrlmc_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// Malformed JSON document, including unknown keys.
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    /// Dataset or checkpoint files that disagree with their index.
    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json { path: path.to_path_buf(), source }
    }

    /// 1 for bad configuration or input data, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Json { .. } | CliError::Format(_) => 1,
            _ => 2,
        }
    }
}
