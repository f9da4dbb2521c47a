use std::path::PathBuf;

use smallgain_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    ConfigAt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical blow-up: {0}")]
    BlowUp(String),
    #[error("certification refused: {0}")]
    Refused(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigAt { .. } | CliError::Config(_) => 2,
            CliError::BlowUp(_) => 3,
            CliError::Refused(_) => 4,
            CliError::Io { .. } | CliError::Internal(_) => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::Hypothesis(_)
            | CoreError::Infeasible(_) => CliError::Config(e.to_string()),
            CoreError::Refused(m) => CliError::Refused(m),
            CoreError::LevelNotFound => CliError::Refused(e.to_string()),
            CoreError::NonFinite { .. } => CliError::BlowUp(e.to_string()),
            CoreError::EmptySampleSet => CliError::Internal(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
