//! Error type shared across the library.
//!
//! Errors are split into [`Error::Validation`] (bad inputs: rejected before any
//! work starts) and runtime failures (singular systems, non-convergent
//! iterations, I/O).  The CLI maps the former to exit code 1 and everything
//! else to exit code 2.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Input validation failure; the message enumerates every violation found.
    #[error("validation: {0}")]
    Validation(String),

    /// A linear system was singular or too ill-conditioned to meet a stated
    /// post-condition.
    #[error("singular system in {context}: {detail}")]
    Singular {
        /// Where the solve happened (operation name, node set, ...).
        context: String,
        /// Condition estimate / residual information.
        detail: String,
    },

    /// An iterative solver failed to reach its tolerance.
    #[error("{context} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        /// Which iteration failed.
        context: String,
        /// Iterations performed.
        iterations: usize,
        /// Last relative residual.
        residual: f64,
    },

    /// Cache file exists but was built from a different grid/stencil.
    #[error("cache hash mismatch for {path}: {detail}")]
    CacheMismatch {
        /// Offending file.
        path: String,
        /// What differed.
        detail: String,
    },

    /// Malformed binary or CSV file.
    #[error("format error in {path}: {detail}")]
    Format {
        /// Offending file.
        path: String,
        /// What was wrong.
        detail: String,
    },

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Any other runtime failure.
    #[error("{0}")]
    Runtime(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that indicate bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }
}
