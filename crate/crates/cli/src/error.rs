//! Error type with the stable process exit-code contract:
//! 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Unparseable or inconsistent configuration (also checkpoint/config
    /// shape conflicts).
    BadConfig(String),
    /// Filesystem trouble, including missing inputs.
    Io(String),
    /// Non-finite loss, failed gradient check, or a numeric contract
    /// violation from the core.
    Numerical(String),
}

pub type ExitCode = i32;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::BadConfig(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn bad_config(msg: impl Into<String>) -> CliError {
        CliError::BadConfig(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> CliError {
        CliError::Io(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> CliError {
        CliError::Numerical(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::BadConfig(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<relsr_core::Error> for CliError {
    fn from(e: relsr_core::Error) -> Self {
        match e {
            relsr_core::Error::NonFinite(m) => CliError::Numerical(m),
            other => CliError::BadConfig(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
