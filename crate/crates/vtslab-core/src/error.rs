//! Crate-wide error type.
//!
//! All fallible public operations return [`Result`]. Variants carry enough
//! context to act on without a debugger: shape errors report both shapes,
//! parse errors report line numbers, checkpoint errors name the path.

use std::path::PathBuf;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error for every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the attempted operation.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: String,
        expected: String,
        got: String,
    },

    /// A hyperparameter is outside its documented range.
    #[error("invalid hyperparameter {name}={value}: {constraint}")]
    InvalidHyperparameter {
        name: String,
        value: String,
        constraint: String,
    },

    /// An operation received an empty collection it cannot act on.
    #[error("empty input: {what}")]
    EmptyInput { what: String },

    /// The caller violated an API contract (e.g. backward before forward).
    #[error("usage error: {msg}")]
    Usage { msg: String },

    /// An operation produced NaN or Inf.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    /// The finite-difference oracle could not probe a coordinate.
    #[error("finite-difference oracle failed at coordinate {coordinate}: {msg}")]
    OracleFailure { coordinate: usize, msg: String },

    /// Training diverged (non-finite loss).
    #[error("training diverged at stage {stage}, epoch {epoch}: {msg}")]
    Diverged {
        stage: String,
        epoch: usize,
        msg: String,
    },

    /// A line-oriented input failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An annotation or record failed validation.
    #[error("validation error: {msg}")]
    Validation { msg: String },

    /// A required checkpoint or data file is missing.
    #[error("missing file: {path}")]
    MissingFile { path: PathBuf },

    /// Serialized data is malformed.
    #[error("malformed {what}: {msg}")]
    Malformed { what: String, msg: String },

    /// Wrapped I/O error with the path that was being accessed.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Shorthand for [`Error::ShapeMismatch`].
    pub fn shape(op: &str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op: op.to_string(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// Shorthand for [`Error::Usage`].
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage { msg: msg.into() }
    }

    /// Shorthand for [`Error::InvalidHyperparameter`].
    pub fn hyper(name: &str, value: impl std::fmt::Display, constraint: &str) -> Self {
        Error::InvalidHyperparameter {
            name: name.to_string(),
            value: value.to_string(),
            constraint: constraint.to_string(),
        }
    }

    /// Wrap an I/O error with the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
