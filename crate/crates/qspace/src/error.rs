//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QspaceError {
    /// Mathematical domain violation (|m| > ell, theta out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid user-supplied configuration or data.
    #[error("validation error: {0}")]
    Validation(String),

    /// A linear system could not be solved.
    #[error("singular system{}: {msg}", cond.map(|c| format!(" (condition estimate {c:.3e})")).unwrap_or_default())]
    Singular { msg: String, cond: Option<f64> },

    /// An iterative routine failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, QspaceError>;

impl From<serde_json::Error> for QspaceError {
    fn from(e: serde_json::Error) -> Self {
        QspaceError::Parse(e.to_string())
    }
}

impl From<csv::Error> for QspaceError {
    fn from(e: csv::Error) -> Self {
        QspaceError::Parse(e.to_string())
    }
}
