use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("quadratic form is not coercive on symmetric matrices (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotCoercive { min_eigenvalue: f64 },
    #[error("linear solver failure: {0}")]
    SolverFailure(String),
    #[error("divergence constraint violated after solve: residual {residual:.3e} > tolerance {tolerance:.3e}")]
    ConstraintViolation { residual: f64, tolerance: f64 },
    #[error("singular KKT system: {0}")]
    SingularKkt(String),
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("force profile is not balanced: |integral of f| = {0:.3e}")]
    ForceNotBalanced(f64),
    #[error("solver did not converge after {iterations} iterations (gradient norm {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("penalized energies are not monotone in k: Q_k({k_prev}) = {prev:.12e} > Q_k({k}) = {next:.12e}")]
    MonotonicityViolation { k_prev: f64, k: f64, prev: f64, next: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
