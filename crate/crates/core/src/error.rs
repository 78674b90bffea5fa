use thiserror::Error;
use tridet_autograd::TensorError;

use crate::data::FeatureFileError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fusion error at level {level}: temporal {temporal:?} vs spatial {spatial:?}")]
    Fusion {
        level: usize,
        temporal: Vec<usize>,
        spatial: Vec<usize>,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error(transparent)]
    FeatureFile(#[from] FeatureFileError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Numeric(_) | Error::Tensor(TensorError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
