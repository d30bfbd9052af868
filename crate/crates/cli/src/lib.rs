//! Command-line front end: config loading, record output and the
//! `run` / `sweep` / `verify` subcommands.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use thiserror::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failed: {}", .0.join(", "))]
    VerifyFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<dfszeno::Error> for CliError {
    fn from(e: dfszeno::Error) -> Self {
        use dfszeno::Error as E;
        match e {
            E::InvalidConfig(_) | E::NotNormalized(_) | E::InvalidFactors { .. } | E::DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
