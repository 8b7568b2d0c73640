//! Command-line front end: scenario files, training runs, shooting solves,
//! comparison sweeps and plot data export.

pub mod artifacts;
pub mod commands;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Divergence(String),
    #[error("reduction invalid: {0}")]
    InvalidMode(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    /// Process exit status: 2 input, 3 divergence, 4 invalid mode, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::InvalidMode(_) => 4,
            CliError::Io(_) | CliError::Failure(_) => 1,
        }
    }
}
