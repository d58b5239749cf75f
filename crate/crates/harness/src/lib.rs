//! Experiment harness: configuration files, multi-seed training runs, CSV
//! learning curves, checkpoints and the `fetrpo` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod selftest;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
