use thiserror::Error;

use crate::uncertainty::Role;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    Covariance(String),

    #[error("expected a {expected:?} gaussian, got {actual:?}")]
    RoleMismatch { expected: Role, actual: Role },

    #[error("filter has not been initialized")]
    NotInitialized,

    #[error("filter is already initialized")]
    AlreadyInitialized,

    #[error("innovation covariance is singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("cannot fit a covariance to an empty residual list")]
    EmptyResiduals,

    #[error("covariance fit did not converge after {iterations} iterations (gradient {gradient:e})")]
    NotConverged { iterations: usize, gradient: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },

    #[error("length mismatch: estimate has {estimate} records, truth has {truth}")]
    LengthMismatch { estimate: usize, truth: usize },

    #[error("timestamp mismatch at record {index}: estimate {estimate}, truth {truth}")]
    TimestampMismatch {
        index: usize,
        estimate: f64,
        truth: f64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
