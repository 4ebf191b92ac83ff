//! Command-line front end for the voxfuse detector: dataset generation,
//! training, evaluation, ablation tables and tracking.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use error::{CliError, CliResult};
