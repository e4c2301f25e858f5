use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension {dim} exceeds the configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },
    #[error("inconsistent factorization: {0}")]
    Factorization(String),
    #[error("operator is not Hermitian (residual {residual:e})")]
    NotHermitian { residual: f64 },
    #[error("operators do not commute (residual {residual:e}): {context}")]
    NonCommuting { residual: f64, context: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty subspace: {0}")]
    EmptySubspace(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("Hessian is singular at lambda = {lambda:?}")]
    SingularHessian { lambda: Vec<f64> },
    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("exponential overflow at lambda = {lambda:?}")]
    Overflow { lambda: Vec<f64> },
    #[error("premise violated (residual {residual:e}): {context}")]
    PremiseViolated { residual: f64, context: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerically null state: {0}")]
    NullState(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
}
