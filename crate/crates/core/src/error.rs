use thiserror::Error;

use crate::expr::EvalError;

/// Errors raised by the toolkit's operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point lies on a guard boundary; request a one-sided derivative")]
    BranchBoundary,
    #[error("weak hyperbolicity violated: lambda_{i} and lambda_{j} are linearly dependent")]
    HyperbolicityViolation { i: usize, j: usize },
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("syntax error at {line}:{col}: expected {expected}")]
    Syntax { line: usize, col: usize, expected: String },
    #[error("arity error: {0}")]
    Arity(String),
    #[error("invalid germ: {0}")]
    InvalidGerm(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("f(x) vanishes (|f(x)| = {0:e}); x lies on the zero fiber")]
    OnFiberV(f64),
    #[error("no discriminant oracle for this germ")]
    NoOracle,
    #[error("no discriminant data available")]
    NoDiscriminant,
    #[error("degenerate projection: <w, x> = {ratio:e} |x|^2")]
    DegenerateProjection { ratio: f64 },
    #[error("integration step failure: {0}")]
    StepFailure(String),
    #[error("not a submersion at this point (sigma_min = {0:e})")]
    NotSubmersion(f64),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("precondition not met: {0}")]
    Precondition(String),
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Domain(m) => Error::Domain(m),
            EvalError::BranchBoundary => Error::BranchBoundary,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
