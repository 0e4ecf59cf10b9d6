use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid curvature {0}: must be strictly negative")]
    Curvature(f64),

    #[error("hyperbolic linear layer: degenerate direction (|W h(x) + b| = 0)")]
    DegenerateDirection,

    #[error("hyperbolic aggregation: weighted sum is not time-like (<m,m> = {0})")]
    DegenerateAggregation(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: visual has {visual} snippets, audio has {audio}")]
    Alignment { visual: usize, audio: usize },

    #[error("format error in {path:?} at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("average precision undefined: no positive labels")]
    UndefinedMetric,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}
