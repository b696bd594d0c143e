//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by builders, fits and the simulation harness.
#[derive(Debug, Error)]
pub enum DdlsError {
    /// A matrix builder was asked for an empty or inconsistent dimension.
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// A scenario or grid configuration violates one of its invariants.
    #[error("config error: {0}")]
    Config(String),

    /// An operation restricted to integer delay/Doppler bins received a
    /// fractional path.
    #[error("non-integer path: {0}")]
    NonIntegerPath(String),

    /// A least-squares fit has fewer snapshots than basis functions.
    #[error("underdetermined fit: {snapshots} snapshots for {basis} basis functions")]
    Underdetermined { snapshots: usize, basis: usize },

    /// A linear system could not be solved even after regularization retries.
    #[error("singular system: {0}")]
    Singular(String),

    /// Waveform/predictor combinations the pipeline cannot realize.
    #[error("incompatible pipeline: {0}")]
    Incompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, DdlsError>;

impl DdlsError {
    /// Wraps an I/O error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DdlsError::Io {
            path: path.into(),
            source,
        }
    }
}
