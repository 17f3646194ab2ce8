//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Kernel matrix could not be factorized even after jitter escalation.
    #[error("ill-conditioned kernel for channel `{channel}` (factorization failed up to jitter {max_jitter:e})")]
    IllConditionedKernel { channel: String, max_jitter: f64 },

    /// An input vector has the wrong length.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A physics residual evaluated to NaN or infinity.
    #[error("non-finite residual at equation index {index}")]
    NonFiniteResidual { index: usize },

    /// A physics Jacobian entry evaluated to NaN or infinity.
    #[error("non-finite jacobian entry at ({row}, {col})")]
    NonFiniteJacobian { row: usize, col: usize },

    /// The regularized inner system could not be solved.
    #[error("singular reconciliation system: {0}")]
    SingularSystem(String),

    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input lies outside the declared domain.
    #[error("out-of-domain input: {0}")]
    Domain(String),

    /// Two runs being compared were produced by different scenarios.
    #[error("mismatched scenarios: {0}")]
    ScenarioMismatch(String),

    /// Refusing to overwrite existing run output without `--force`.
    #[error("output path already exists: {0} (pass --force to overwrite)")]
    OutputCollision(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Shorthand for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;
