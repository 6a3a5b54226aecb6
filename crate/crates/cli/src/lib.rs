//! Command-line orchestration for the neural Stein samplers: experiment
//! configs, datasets, checkpoints, sample files, reports and plots.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod runner;
pub mod svg;

pub use error::{CliError, Result};
