use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("invalid mesh resolution {n} (need at least {min})")]
    Resolution { n: usize, min: usize },

    #[error("field length {got} does not match mesh ({expected} {what})")]
    MeshMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid exponent field: {0}")]
    InvalidExponent(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("luxemburg bisection failed: {0}")]
    Bisection(String),

    #[error("modular bound violated: {0}")]
    BoundViolation(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("hypothesis check '{name}' failed: {lhs} vs {rhs}")]
    Hypothesis { name: String, lhs: f64, rhs: f64 },

    #[error("linear solver failure: {0}")]
    Linear(String),

    #[error("newton solve did not converge: residual {residual:e} after {iters} iterations")]
    NotConverged { residual: f64, iters: usize },

    #[error("positivity failure: {0}")]
    Positivity(String),

    #[error("barrier ordering failure: {0}")]
    Ordering(String),

    #[error("calibration exhausted: {0}")]
    Infeasible(String),

    #[error("degenerate test function: {0}")]
    Degenerate(String),

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
