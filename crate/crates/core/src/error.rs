use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Physically meaningless or inconsistent model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation's precondition (dimensions, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The gain denominator at `step` is singular or too ill-conditioned to invert.
    #[error("controller synthesis failed at step {step}: {reason}")]
    Synthesis { step: usize, reason: String },

    /// The recursed value form disagrees with the one-step expansion.
    #[error("value-form verification failed at step {step}: discrepancy {discrepancy:.3e} > {tolerance:.1e}")]
    ValueForm {
        step: usize,
        discrepancy: f64,
        tolerance: f64,
    },

    /// Malformed or inconsistent recording data.
    #[error("ingestion error at {location}: {reason}")]
    Ingest { location: String, reason: String },

    /// Smoothing, detection or normalization could not be carried out.
    #[error("analysis error: {0}")]
    Analysis(String),

    /// Relative-RMS metric undefined (zero-norm reference).
    #[error("metric error: {0}")]
    Metric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
