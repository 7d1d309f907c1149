use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] brain3d::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
    #[error("experiment directory is locked by {0} (remove it if no other command is running)")]
    Locked(PathBuf),
    #[error("missing input {0}; run the producing command first")]
    Missing(PathBuf),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
