//! Experiment harness, config files, snapshot formats and the command-line
//! driver for `votersim-core`.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod harness;
pub mod snapshot;

pub use error::{HarnessError, Result};
