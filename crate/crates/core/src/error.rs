use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),

    #[error("direction {0:?} lies below the upper hemisphere")]
    Hemisphere([f64; 3]),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("light matrix is ill-conditioned (condition number {0:.3e})")]
    Conditioning(f64),

    #[error("infeasible plan: {0}")]
    Feasibility(String),

    #[error("{subsets} subsets exceed the exhaustive search cap of {cap}; reduce K or M")]
    Cap { subsets: u128, cap: u128 },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
