//! Crate-wide error type.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// Invalid physical or model parameters.
    InvalidParams(String),
    /// Bad argument to an operation (negative tau, out-of-range input, ...).
    InvalidArgument(String),
    /// Covariance factorization failed while sampling the variation grid.
    CovarianceNotPositiveDefinite,
    /// A sampled grid cell came out non-positive; the draw must be redone.
    ResampleRequired { cell: usize, value: f64 },
    /// Core frequency reached zero: the core is at end of life.
    EndOfLife { core_id: usize },
    /// Idle-history state machine violated (e.g. assignment with no open idle).
    IdleStateMachine(String),
    /// Malformed input file.
    Parse { line: usize, message: String },
    /// Inconsistent experiment configuration.
    Config(String),
    /// Internal engine inconsistency (time regression, lost task, ...).
    Internal(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidParams(m) => write!(f, "invalid parameters: {m}"),
            SimError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            SimError::CovarianceNotPositiveDefinite => {
                write!(f, "covariance matrix not positive-definite after jitter")
            }
            SimError::ResampleRequired { cell, value } => {
                write!(f, "grid cell {cell} sampled non-positive ({value}); resample required")
            }
            SimError::EndOfLife { core_id } => {
                write!(f, "core {core_id} reached end of life (frequency <= 0)")
            }
            SimError::IdleStateMachine(m) => write!(f, "idle state machine: {m}"),
            SimError::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            SimError::Config(m) => write!(f, "config error: {m}"),
            SimError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for SimError {}

pub type Result<T> = std::result::Result<T, SimError>;
