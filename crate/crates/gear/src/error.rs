//! Error types shared across the pipeline.

use thiserror::Error;

/// Unified error type for the verification pipeline.
#[derive(Debug, Error)]
pub enum GearError {
    /// Two operands (or an operand and a contract) disagree on shape.
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// An aggregation (max, mean, softmax over neighbors, evidence set) got no inputs.
    #[error("empty aggregation in {op}: at least one input is required")]
    EmptyAggregation { op: &'static str },

    /// `backward` was asked to differentiate a non-scalar value.
    #[error("backward requires a 1x1 loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    /// A structured input file failed to parse.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A lookup key (example id, document name) was absent.
    #[error("missing key: {0}")]
    MissingKey(String),

    /// Configuration values violate a contract.
    #[error("config error: {0}")]
    Config(String),

    /// Data-level contract violation (duplicate ids, unresolvable gold evidence, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GearError {
    /// Stable one-word category used by the CLI for machine-parsable errors.
    pub fn category(&self) -> &'static str {
        match self {
            GearError::Io { .. } => "io",
            GearError::Config(_) => "config",
            _ => "validation",
        }
    }
}

pub type Result<T> = std::result::Result<T, GearError>;
