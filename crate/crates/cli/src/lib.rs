//! Experiment driver: trains the model pair, builds the attack datasets and
//! evaluates the detectors, writing CSV and JSON artifacts.

pub mod commands;
pub mod config;
pub mod failure;

pub use config::{DatasetName, ExperimentConfig};
pub use failure::{CliError, ExitCode};
