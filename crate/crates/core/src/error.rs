use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding a PGM frame file.
#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame file {0} does not exist")]
    Missing(PathBuf),
    #[error("{path}: not a binary PGM file (magic {magic:?})")]
    Format { path: PathBuf, magic: String },
    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: dimensions {width}x{height} overflow the pixel limit")]
    DimensionOverflow {
        path: PathBuf,
        width: u64,
        height: u64,
    },
    #[error("{path}: pixel payload truncated ({got} of {expected} bytes)")]
    Truncated {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{context}: parse error: {msg}")]
    Parse { context: String, msg: String },

    /// A declared invariant of an input document does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Frame(#[from] FrameError),

    /// A precondition of an operation was violated by its arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("model file version {found} is not supported (this build reads version {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("feature layout mismatch: model was trained for {model:?}, engine produces {engine:?}")]
    FeatureLayout { model: String, engine: String },

    #[error("segment {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("deadline exceeded at segment {index} ({compute_s:.3} s compute for {duration_s:.3} s of media)")]
    DeadlineExceeded {
        index: usize,
        compute_s: f64,
        duration_s: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_segment(self, index: usize) -> Self {
        match self {
            e @ Error::Segment { .. } => e,
            e => Error::Segment {
                index,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through segment context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Segment { source, .. } => source.root(),
            e => e,
        }
    }
}
