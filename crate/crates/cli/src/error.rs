//! Error type for the runner, split by what the exit code should be:
//! problems with user-supplied input exit 1, numerical failures inside a
//! run exit 2.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("engine failure at step {index}: {source}")]
    Engine {
        /// 1-based observation index where the run died.
        index: usize,
        #[source]
        source: tpmix::Error,
    },

    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// Process exit code: 1 for bad input, 2 for internal/numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 1,
            CliError::Engine { .. } | CliError::Internal(_) => 2,
        }
    }
}
