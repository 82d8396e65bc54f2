use std::fmt;

use chaosode_bench::BenchError;

/// Error with a stable process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration, missing inputs: exit 2.
    Usage(String),
    /// Failures while running: exit 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Invalid(_) | BenchError::Json(_) => CliError::Usage(e.to_string()),
            BenchError::Core(chaosode::Error::InvalidArgument(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<chaosode::Error> for CliError {
    fn from(e: chaosode::Error) -> Self {
        match e {
            chaosode::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
