use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the surrogate, evidence and justifiability machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("moment of order {order} is not estimable from {samples} samples (max order {max})")]
    MomentOrder { order: usize, samples: usize, max: usize },

    #[error("singular moment matrix for parameter '{parameter}' at degree {degree}")]
    SingularMoments { parameter: String, degree: usize },

    #[error("root finding did not converge for polynomial with coefficients {coefficients:?}")]
    RootFinding { coefficients: Vec<f64> },

    #[error("{0}")]
    Collocation(String),

    #[error("rank-deficient design matrix; closest collocation pairs: {pairs}")]
    RankDeficient { pairs: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("likelihood underflow: {0}")]
    Underflow(String),

    #[error("model '{model}' failed: {reason}")]
    ModelFailure { model: String, reason: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
