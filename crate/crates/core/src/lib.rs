//! Significance detection for one-dimensional persistence diagrams.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod synth;
pub mod tun;

pub use error::{CoreError, Result};
