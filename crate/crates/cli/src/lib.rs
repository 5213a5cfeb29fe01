//! File formats and pipeline orchestration around `stugn-core`.
//!
//! The binary exposes five subcommands — `generate`, `corrupt`, `train`,
//! `evaluate`, `report` — that communicate exclusively through files in a
//! run directory. Every command is deterministic given its config, so
//! re-running overwrites outputs with identical bytes.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod pipeline;
pub mod report;

/// Errors split by exit code: validation failures exit 1, runtime and
/// numeric failures exit 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> CliError {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
