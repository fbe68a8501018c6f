use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("generation failed for {entry} after {attempts} attempts")]
    GenerationFailed { entry: String, attempts: usize },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("non-finite gradient in {param} at epoch {epoch}, step {step}")]
    NonFiniteGradient { param: String, epoch: usize, step: u64 },
    #[error(transparent)]
    Topo(#[from] tun_topo::TopoError),
    #[error(transparent)]
    Nn(#[from] tun_nn::NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Json { path, source }
}
