use std::fmt;
use std::process::ExitCode;

use thiserror::Error;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input. Exit 2.
    #[error("input error: {0}")]
    Input(String),
    /// A library component rejected the run. Exit 3.
    #[error("{module} error: {message}")]
    Component { module: &'static str, message: String },
    /// Schedule outside the certified set. Exit 4.
    #[error("admissibility gate: {0}")]
    Gate(String),
}

impl CliError {
    pub fn component(module: &'static str, err: impl fmt::Display) -> Self {
        CliError::Component { module, message: err.to_string() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Input(_) => 2,
            CliError::Component { .. } => 3,
            CliError::Gate(_) => 4,
        })
    }
}

pub type CliResult<T> = Result<T, CliError>;
