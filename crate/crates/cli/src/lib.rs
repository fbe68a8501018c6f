//! The `tun` command-line pipeline: corpus generation, persistence
//! diagrams, features, training, evaluation, baselines and plots.

pub mod app;
pub mod error;
pub mod io;
pub mod pipeline;

pub use app::{run, Cli};
pub use error::{CliError, Result};
