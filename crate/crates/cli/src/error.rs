//! CLI error type and the exit-code contract:
//! 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::fmt;

use donn::error::DonnError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration: unparseable files, invalid values, missing
    /// referenced paths.
    Config(String),
    /// Everything surfaced by the core library (dataset, checkpoint,
    /// numeric, I/O).
    Core(DonnError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(DonnError::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<DonnError> for CliError {
    fn from(e: DonnError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(DonnError::Io(e))
    }
}
