//! Error type shared across the crate.

use std::fmt;

/// Crate-wide error. The `kind` groups errors by how the CLI maps them to
/// exit codes: usage (1), data (2), numerical (3).
#[derive(Debug)]
pub enum Error {
    /// Bad command line, bad config value, inconsistent request.
    Usage(String),
    /// I/O failures and malformed or mismatched data files.
    Data(String),
    /// Shape mismatches between tensors, layers or models.
    Shape(String),
    /// Numerical failure: divergence, non-finite values, failed convergence.
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn usage<S: Into<String>>(msg: S) -> Self {
        Error::Usage(msg.into())
    }
    pub fn data<S: Into<String>>(msg: S) -> Self {
        Error::Data(msg.into())
    }
    pub fn shape<S: Into<String>>(msg: S) -> Self {
        Error::Shape(msg.into())
    }
    pub fn numeric<S: Into<String>>(msg: S) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Shape(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Numeric(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(e.to_string())
    }
}
