use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input, missing files, shape mismatches.
    Data,
    /// Non-finite values or other numerical breakdown.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("utterance too short: {n_samples} samples, window needs {window}")]
    UtteranceTooShort { n_samples: usize, window: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated record: {0}")]
    TruncatedRecord(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("overlapping or reversed segments in utterance {0}")]
    BadSegments(String),

    #[error("unmapped token '{0}'")]
    UnmappedToken(String),

    #[error("infeasible alignment: no admissible path through the graph")]
    InfeasibleAlignment,

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("non-finite covariance in component {component}")]
    CovarianceOverflow { component: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty corpus")]
    EmptyCorpus,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::CovarianceOverflow { .. } | Error::NonFinite(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
