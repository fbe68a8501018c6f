use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("unknown parameter or buffer `{0}`")]
    Unknown(String),
    #[error("parameter `{0}` is registered twice")]
    Duplicate(String),
    #[error("every row of the batch is masked out")]
    EmptyBatch,
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape { op, detail: detail.into() }
}
