//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// configuration problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad spec fields, inconsistent options.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid or unusable input data.
    #[error("data error: {0}")]
    Data(String),

    /// A numeric routine failed (singular system, invalid quantile, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative solver ran out of iterations.
    #[error("solver did not converge after {iterations} iterations (last change {gap:e})")]
    NonConvergence {
        iterations: usize,
        /// Convergence-criterion value at the final iteration.
        gap: f64,
        /// Coefficients at the final iteration.
        last_iterate: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code class for the CLI: 2 config, 3 data/io, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) | Error::NonConvergence { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
