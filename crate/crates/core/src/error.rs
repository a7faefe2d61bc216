use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("closed-loop matrix is not Hurwitz: {0}")]
    NotHurwitz(String),

    #[error("integrator stage produced a non-finite derivative at t = {t}")]
    NonFiniteDerivative { t: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("state escaped the admissible region at t = {t}: |x_{index}| = {value}")]
    StateEscape { t: f64, index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("gaussian process has no training data")]
    Unfitted,

    #[error("every hyperparameter start failed")]
    AllStartsFailed,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("value out of range for `{key}`: {reason}")]
    OutOfRange { key: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn out_of_range(key: &str, reason: impl Into<String>) -> Self {
        Error::OutOfRange { key: key.to_string(), reason: reason.into() }
    }
}
