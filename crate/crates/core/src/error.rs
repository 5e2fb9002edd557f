use thiserror::Error;

use crate::conic::{ConicError, SolverStatus};
use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("invalid POVM: {0}")]
    InvalidPovm(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("setting {setting} has zero weight; quantifiers require p(x) > 0")]
    ZeroWeight { setting: usize },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("invalid simulation map: {0}")]
    InvalidSimulation(String),
    #[error("{count} deterministic strategies exceed the enumeration cap of {cap}")]
    CapExceeded { count: u128, cap: u128 },
    #[error("dimension {0} is not prime")]
    NotPrime(usize),
    #[error("solver returned {status:?} while computing {what}")]
    Solver { what: String, status: SolverStatus },
    #[error("quantifier value {value:e} is negative beyond tolerance")]
    NegativeValue { value: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid behavior table: {0}")]
    InvalidBehavior(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
