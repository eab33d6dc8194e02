use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {what}")]
    InvalidShape { what: &'static str, shape: Vec<usize> },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("rank-deficient features: pivot {pivot} of {dim} is {value:e} (ridge {ridge:e})")]
    RankDeficient {
        pivot: usize,
        dim: usize,
        value: f64,
        ridge: f64,
    },

    #[error("degenerate domain batch: target norm is zero")]
    DegenerateDomain,

    #[error("missing forward record for {0}")]
    MissingRecord(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse category used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::RankDeficient { .. } | Error::DegenerateDomain => {
                ErrorKind::Numerical
            }
            Error::Config(_) | Error::Invalid(_) => ErrorKind::Usage,
            Error::Shape { .. }
            | Error::InvalidShape { .. }
            | Error::MissingRecord(_)
            | Error::Empty(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}
