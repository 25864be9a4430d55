//! Crate-wide error type.
//!
//! Errors are split into four kinds so the CLI can map them onto stable exit
//! codes: configuration/usage problems (exit 1), malformed or inconsistent
//! data (exit 2) and numerical failures (exit 3). I/O errors surface as data
//! errors since they almost always mean a missing or unreadable input file.

use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A function was called with arguments outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration file is missing, malformed, or contains unknown keys.
    #[error("config error: {0}")]
    Config(String),

    /// Input data violates a schema or consistency requirement.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical operation failed (non-finite values, indefinite matrix, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
