use thiserror::Error;

/// Errors surfaced by the estimation and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched or unusable matrix/vector dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scenario or configuration value violates its invariants.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// An input that must be Hermitian is not (beyond tolerance).
    #[error("matrix is not Hermitian (residual {residual:.3e} > tol {tol:.3e})")]
    NotHermitian { residual: f64, tol: f64 },

    /// An empty sample batch or record set where at least one item is needed.
    #[error("empty input: {0}")]
    Empty(String),

    /// A matrix that must be positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A matrix inversion or eigen decomposition could not be carried out.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Index outside the valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// A parameter violates its domain (e.g. negative variance).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
