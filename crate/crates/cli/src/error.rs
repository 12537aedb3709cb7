use mtt_core::error::MttError;
use thiserror::Error;

/// Failure of a CLI run, classified by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing or conflicting configuration, unusable input size.
    #[error("usage: {0}")]
    Usage(String),

    /// Input files that cannot be read or do not describe a valid run.
    #[error("data: {0}")]
    Data(String),

    /// Covariance breakdown or a collapsed particle filter.
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<MttError> for CliError {
    fn from(e: MttError) -> Self {
        let msg = e.to_string();
        match e.root() {
            MttError::InvalidParameter(_) => CliError::Usage(msg),
            MttError::Numerical { .. } | MttError::FilterCollapse { .. } => {
                CliError::Numerical(msg)
            }
            MttError::Structural(_)
            | MttError::Parse { .. }
            | MttError::Io(_)
            | MttError::WithContext { .. } => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
