use std::path::Path;

use thiserror::Error;

/// CLI failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input data error: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("selftest failed: {0}")]
    Selftest(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numerical(_) | CliError::Selftest(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<spawntrack::Error> for CliError {
    fn from(e: spawntrack::Error) -> Self {
        use spawntrack::Error as E;
        match e {
            E::InvalidConfig { .. } | E::LimitExceeded(_) => CliError::Config(e.to_string()),
            E::Singularity { .. } | E::Numerical(_) | E::DegenerateUpdate => CliError::Numerical(e.to_string()),
            E::InvalidEvent(_) | E::OutOfRange(_) | E::AtSensorOrigin => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
