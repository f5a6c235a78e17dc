//! The `nlmi` command-line tool: dataset generation, training, evaluation,
//! gradient checks and the term ablation.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use config::{DatasetSource, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: unreadable or invalid config, incompatible data.
    #[error("{0}")]
    Config(String),
    /// NaN or infinity during training, or a failed gradient check.
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<nlmi_core::training::TrainError> for CliError {
    fn from(e: nlmi_core::training::TrainError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<nlmi_core::layers::ModelError> for CliError {
    fn from(e: nlmi_core::layers::ModelError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}
