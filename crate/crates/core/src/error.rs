use std::path::PathBuf;

/// Errors produced by every stage of the pipeline.
///
/// Variants are grouped so a front end can map them onto exit codes:
/// [`Error::is_numeric`] marks iteration-cap and convergence failures,
/// everything else is a data or argument problem.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("retry cap of {attempts} exhausted: {reason}")]
    RetryCap { attempts: usize, reason: String },

    #[error("iteration cap of {cap} reached near ({x0:.3}, {y0:.3})-({x1:.3}, {y1:.3})")]
    IterationCap {
        cap: usize,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for failures of an iterative procedure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::RetryCap { .. } | Error::IterationCap { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
