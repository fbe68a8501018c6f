use std::path::PathBuf;

use thiserror::Error;
use tun_core::CoreError;
use tun_nn::NnError;
use tun_topo::TopoError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

fn topo_code(e: &TopoError) -> i32 {
    match e {
        TopoError::DegenerateInput(_) | TopoError::InvalidInput(_) => EXIT_INVALID,
        TopoError::InconsistentComplex { .. } | TopoError::OracleTooLarge { .. } => EXIT_INTERNAL,
    }
}

impl CliError {
    /// 2 for anything the caller can fix by changing the input, 3 when an
    /// internal invariant broke.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_INVALID,
            CliError::Topo(e) => topo_code(e),
            CliError::Core(e) => match e {
                CoreError::InvalidInput(_)
                | CoreError::Shape(_)
                | CoreError::IncompatibleCheckpoint(_)
                | CoreError::Io { .. }
                | CoreError::Json { .. } => EXIT_INVALID,
                CoreError::GenerationFailed { .. } | CoreError::NonFiniteGradient { .. } => EXIT_INTERNAL,
                CoreError::Topo(t) => topo_code(t),
                CoreError::Nn(n) => match n {
                    NnError::Shape { .. }
                    | NnError::EmptyBatch
                    | NnError::IncompatibleCheckpoint(_)
                    | NnError::Unknown(_)
                    | NnError::Io(_) => EXIT_INVALID,
                    NnError::NonFiniteGradient { .. } | NnError::NonFinite { .. } | NnError::Duplicate(_) => {
                        EXIT_INTERNAL
                    }
                },
            },
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
