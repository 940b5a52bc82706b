//! Experiment harness behind the `csrtomo` command-line tool.

pub mod config;
pub mod experiment;

pub use config::{ConfigError, ExperimentConfig, Method, ViewSpec};
