use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index set is empty")]
    EmptyIndexSet,
    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no samples")]
    NoSamples,
    #[error("corrupt dataset file: {0}")]
    Corrupt(String),
    #[error("unsupported cache version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("operator is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("subproblem solver failed: {0}")]
    SolverFailure(String),
    #[error("singular or indefinite Hessian at iteration {iteration}")]
    SingularHessian { iteration: usize },
    #[error("divergence: objective reached {value:e} at iteration {iteration}")]
    Divergence { iteration: usize, value: f64 },
    #[error("memory budget exceeded: {needed} entries > {budget}")]
    MemoryBudget { needed: usize, budget: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
