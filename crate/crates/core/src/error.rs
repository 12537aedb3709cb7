//! Error type shared by every estimator stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MttError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A covariance that had to be factorized was not positive definite.
    #[error("numerical failure in {context}")]
    Numerical { context: String },

    /// An association record does not fit the state it is applied to.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("particle filter collapsed at t={t}: every incremental weight is zero")]
    FilterCollapse { t: usize },

    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<MttError>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MttError {
    pub fn numerical(context: impl Into<String>) -> Self {
        MttError::Numerical {
            context: context.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        MttError::WithContext {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context wrappers.
    pub fn root(&self) -> &MttError {
        match self {
            MttError::WithContext { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, MttError>;
