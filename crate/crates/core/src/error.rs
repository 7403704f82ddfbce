use std::path::PathBuf;

use thiserror::Error;

/// Coarse error class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("constant column `{0}` cannot be standardized")]
    DegenerateColumn(String),

    #[error("invalid sampler state: {0}")]
    InvalidState(String),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("all eigenvalues fall below the truncation cutoff ({cutoff:e})")]
    DegenerateBasis { cutoff: f64 },

    #[error("precision matrix for basis coefficient k={k} is not positive definite")]
    NotPositiveDefinite { k: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("requested grid differs from the training grid and no raw basis is available")]
    UnsupportedGrid,

    #[error("dense oracle refused: {size} columns exceeds the limit of {limit}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::Dimension(_)
            | Error::DegenerateColumn(_)
            | Error::UnsupportedGrid
            | Error::OracleTooLarge { .. }
            | Error::Format { .. } => ErrorKind::InvalidInput,
            Error::InvalidState(_)
            | Error::Decomposition(_)
            | Error::DegenerateBasis { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::AtIteration { source, .. } => source.kind(),
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
