//! The two failure classes and their exit codes.

use std::fmt;

/// A usage error is the caller's fault and detected before any work; a data
/// error comes from the contents of an input file or from the computation.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    /// An invalid flag, environment variable or config key `source`.
    pub fn usage(source: &str, msg: impl fmt::Display) -> Self {
        CliError::Usage(format!("{source}: {msg}"))
    }

    /// Bad contents of the file named by flag `source`.
    pub fn data(source: &str, path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::Data(format!("{source} {}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
