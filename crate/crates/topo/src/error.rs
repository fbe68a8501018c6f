use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopoError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("inconsistent complex: simplex {simplex} is missing face {face:?}")]
    InconsistentComplex { simplex: usize, face: Vec<u32> },
    #[error("oracle input too large: {size} simplices (cap {cap})")]
    OracleTooLarge { size: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, TopoError>;
