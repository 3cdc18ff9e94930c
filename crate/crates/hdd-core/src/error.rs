//! Error type shared by every module in the crate.

use thiserror::Error;

/// Unified error for geometry, encoder, distillation, and I/O failures.
#[derive(Debug, Error)]
pub enum HddError {
    /// Two operands have incompatible shapes or dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input lies outside the mathematical domain of the operation
    /// (off-manifold point, non-tangent vector, point outside the unit ball, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument value is structurally invalid (empty set, zero batch,
    /// non-positive curvature magnitude, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced or detected a non-finite / numerically
    /// meaningless value and cannot continue.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("no convergence after {iters} iterations (gradient norm {grad_norm:.6e})")]
    Convergence { iters: usize, grad_norm: f64 },

    /// A dataset or container file is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A configuration file or key is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HddError>;
