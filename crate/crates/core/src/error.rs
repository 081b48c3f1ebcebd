use std::path::PathBuf;

/// Errors raised by mesh construction, assembly, linear solves and time stepping.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("saddle-point operator is singular: {0}")]
    Singular(String),

    #[error("linear solve missed its tolerance: relative residual {residual:.3e} after {iterations} refinement steps")]
    NotConverged { residual: f64, iterations: usize },

    /// The scalar equation for `S^{n+1}` lost its positive leading coefficient.
    /// Unique solvability guarantees this never happens for a consistent
    /// discretization, so hitting it signals a broken operator.
    #[error("scalar SAV equation has non-positive leading coefficient {value:.6e} at step {step} (unique solvability violated)")]
    NonPositiveDenominator { step: usize, value: f64 },

    #[error("problem `{0}` has no closed-form exact solution")]
    NoExactSolution(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
