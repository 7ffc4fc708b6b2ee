use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    EmptyStream { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt stream: {0}")]
    Corrupt(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 1,
            Error::EmptyStream { .. }
            | Error::Dimension { .. }
            | Error::Format(_)
            | Error::Corrupt(_)
            | Error::Wav(_)
            | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
