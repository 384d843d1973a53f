//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel weights degenerate at row {row}: zero normalizing sum")]
    DegenerateWeights { row: usize },

    #[error("smoother matrix singular at row {row} (condition number {cond:.3e})")]
    SingularSmoother { row: usize, cond: f64 },

    #[error("design matrix numerically singular (condition number {cond:.3e})")]
    SingularDesign { cond: f64 },

    #[error("insufficient data: n = {n}, need at least {needed}")]
    InsufficientData { n: usize, needed: usize },

    #[error("non-positive variance {value} at index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("non-positive or non-finite weight {value} at index {index}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("HAC lag {lag} too large for n = {n} (need lag < n/2)")]
    LagTooLarge { lag: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix {index} of the path is not symmetric positive definite")]
    NonPdInput { index: usize },

    #[error("stability violated at u = {u:.4}: companion spectral radius {radius:.6}")]
    StabilityViolation { u: f64, radius: f64 },

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {total} replications failed (budget 1%); first failure: {first}")]
    ReplicationBudget {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code used in result documents.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateWeights { .. } => "degenerate_weights",
            Error::SingularSmoother { .. } => "singular_smoother",
            Error::SingularDesign { .. } => "singular_design",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::NonPositiveVariance { .. } => "non_positive_variance",
            Error::NonPositiveWeight { .. } => "non_positive_weight",
            Error::LagTooLarge { .. } => "lag_too_large",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NonPdInput { .. } => "non_pd_input",
            Error::StabilityViolation { .. } => "stability_violation",
            Error::InvalidBandwidth(_) => "invalid_bandwidth",
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse_error",
            Error::Schema(_) => "schema_error",
            Error::Config(_) => "config_error",
            Error::ReplicationBudget { .. } => "replication_budget",
            Error::Io(_) => "io_error",
        }
    }

    /// True for errors caught while validating inputs, before any numerics ran.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InsufficientData { .. }
                | Error::NonPositiveVariance { .. }
                | Error::NonPositiveWeight { .. }
                | Error::LagTooLarge { .. }
                | Error::DimensionMismatch(_)
                | Error::NonPdInput { .. }
                | Error::StabilityViolation { .. }
                | Error::InvalidBandwidth(_)
                | Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::Schema(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
