use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// Fixed-step descent blew past the divergence guard.
    #[error(
        "objective diverged at iteration {iteration}: {objective:e} exceeds 10x the initial {initial:e}; reduce eta"
    )]
    Diverged {
        iteration: usize,
        objective: f64,
        initial: f64,
    },

    #[error("non-finite value produced by the {block} update at image {index}; reduce eta")]
    NonFinite { block: &'static str, index: usize },

    #[error("singular neighborhood system for predictor {index} (alpha = 0 with rank-deficient neighbors)")]
    Singular { index: usize },

    #[error("no held-out entries to evaluate for {0}")]
    NothingHeldOut(String),

    #[error("no image has a held-out positive tag")]
    NoPositives,

    #[error("sweep value {value}: {source}")]
    Sweep {
        value: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerical procedure itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Diverged { .. } | Error::NonFinite { .. } | Error::Singular { .. } => true,
            Error::Sweep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
