//! Crate-wide error type.
//!
//! Variants map onto the CLI exit-code classes: config (2), data (3),
//! numeric (4).

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Unreadable, malformed, or insufficient input data.
    Data(String),
    /// Non-finite values or other numeric failures during optimization.
    Numeric(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Process exit code for the CLI: distinct codes per failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
