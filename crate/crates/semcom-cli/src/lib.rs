//! Experiment driver around the `semcom` library: pretraining runs,
//! misalignment evaluation, split-learning recovery sessions, cost
//! accounting, and grid sweeps, all steered by a single JSON config.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics_csv;
pub mod pgm;

pub use error::{Category, CliError, Result};
