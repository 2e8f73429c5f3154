//! Batch front end for the `superito` crate: configuration, experiment
//! orchestration and CSV/JSON reports.

pub mod config;
pub mod fieldspec;
pub mod manifest;
pub mod run;

pub use config::{ExperimentConfig, ExperimentKind};
pub use run::{compute, run_experiment, Outcome, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    ManifestMismatch(String),
}

impl CliError {
    /// Process exit status: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
