//! Minimal deterministic reverse-mode autodiff over dense `f64` tensors,
//! with the layers, loss and optimizer needed by the TUN classifier.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{FocalParams, Gradients, Graph, Mode, Var};
pub use params::{cosine_lr, AdamW, BnUpdate, ParamStore};
pub use tensor::Tensor;
