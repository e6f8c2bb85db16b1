//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors produced by problem ingestion, evaluation, and verification.
#[derive(Debug)]
pub enum Error {
    /// File could not be read or written.
    Io { path: PathBuf, source: std::io::Error },
    /// File content is not valid JSON for the expected schema.
    Parse { path: PathBuf, message: String },
    /// A problem-file field violates an invariant. `field` is the JSON path.
    Validation { field: String, message: String },
    /// Array or matrix dimensions disagree.
    Dimension { what: String, expected: usize, got: usize },
    /// Channel or coordinate index outside `0..len`.
    IndexOutOfRange { what: String, index: usize, len: usize },
    /// Operation requires a different control kind than the problem declares.
    ControlKind { expected: String, got: String },
    /// Surface parameter vector has the wrong length.
    ParamLength { expected: usize, got: usize },
    /// A functional or gradient evaluation produced a nonfinite value.
    Nonfinite { context: String },
    /// The switching surface cannot be solved for the controlled coordinates.
    SurfaceNotReducible { message: String },
    /// Adaptive integrator drove the step below the floor (stiffness).
    StepUnderflow { t: f64, step: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::Parse { path, message } => write!(f, "{}: {}", path.display(), message),
            Error::Validation { field, message } => write!(f, "invalid `{}`: {}", field, message),
            Error::Dimension { what, expected, got } => {
                write!(f, "dimension mismatch in {}: expected {}, got {}", what, expected, got)
            }
            Error::IndexOutOfRange { what, index, len } => {
                write!(f, "{} index {} out of range (len {})", what, index, len)
            }
            Error::ControlKind { expected, got } => {
                write!(f, "control kind mismatch: operation needs {}, problem uses {}", expected, got)
            }
            Error::ParamLength { expected, got } => {
                write!(f, "surface parameter vector has length {}, expected {}", got, expected)
            }
            Error::Nonfinite { context } => write!(f, "nonfinite value in {}", context),
            Error::SurfaceNotReducible { message } => {
                write!(f, "surface not reducible: {}", message)
            }
            Error::StepUnderflow { t, step } => {
                write!(f, "integrator step underflow at t = {} (step {}); system too stiff", t, step)
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
