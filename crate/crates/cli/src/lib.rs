//! Command-line front end for fuzzy particle swarm reinforcement learning:
//! configuration, artifact files and the pipeline stages behind each
//! subcommand.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod pipeline;

use thiserror::Error;

/// Errors that end a command, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] fpsrl_core::Error),
    #[error("threshold not met: {0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Threshold(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}
