use thiserror::Error;

/// Errors raised by the estimators, tests and harness.
#[derive(Debug, Error)]
pub enum SeparError {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("flip-flop iterate {iteration} lost positive definiteness")]
    SingularIterate { iteration: usize },

    #[error("flip-flop did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("sample too small: n = {n} but the test needs n - 1 > p1*p2 = {dim}")]
    SampleTooSmall { n: usize, dim: usize },

    #[error("degenerate dimensions p1 = {p1}, p2 = {p2}: (p1 - 1)(p2 - 1) vanishes")]
    DegenerateDimensions { p1: usize, p2: usize },

    #[error("invalid moment estimates: {0}")]
    InvalidMoments(String),

    #[error("quadrature failed to reach tolerance {tolerance:e} (achieved {achieved:e})")]
    QuadratureFailure { tolerance: f64, achieved: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SeparError {
    /// True for failures of the numerical routines (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SeparError::NotPositiveDefinite { .. }
                | SeparError::SingularIterate { .. }
                | SeparError::NoConvergence { .. }
                | SeparError::InvalidMoments(_)
                | SeparError::QuadratureFailure { .. }
        )
    }
}

pub type Result<T, E = SeparError> = std::result::Result<T, E>;
