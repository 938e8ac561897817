use thiserror::Error;

/// Errors raised by the model, the discretization and the solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside the admissible domain ({domain})")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("value {value} is outside the attainable range ({low}, {high})")]
    Range { value: f64, low: f64, high: f64 },

    #[error("adaptive quadrature did not reach tolerance {tol:e} on [{a}, {b}] (estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, tol: f64, estimate: f64 },

    #[error("scalar root-finding failed: {0}")]
    RootFind(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parameter set violates assumptions: {}", .0.join("; "))]
    Assumptions(Vec<String>),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("non-finite coefficient in cell {cell}: {what}")]
    NonFinite { cell: usize, what: &'static str },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("fixed-point iteration failed after {iterations} iterations (last residual {residual:e})")]
    FixedPoint { iterations: usize, residual: f64 },

    #[error("discrete entropy inequality violated at step {step} (margin {margin:e})")]
    EntropyViolation { step: usize, margin: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
