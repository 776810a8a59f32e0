use std::io;

use thiserror::Error;

/// Errors raised anywhere in the selection and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains a non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    ConvergenceFailure { sweeps: usize, off_norm: f64 },

    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("model parameters became non-finite during epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("batch has {n} samples, at least {min} required")]
    BatchTooSmall { n: usize, min: usize },

    #[error("filter ratio {0} is outside [0, 1)")]
    InvalidFilterRatio(f64),

    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("evaluation set is empty")]
    EmptyDataset,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed feature file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters, flags or shapes supplied by the caller.
    Config,
    /// Filesystem failures and malformed input files.
    Io,
    /// The numerics failed (no eigensolver convergence, diverged training).
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ConvergenceFailure { .. } | Error::Diverged { .. } => ErrorKind::Numerical,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => ErrorKind::Io,
            // Non-finite data almost always comes from a bad input file.
            Error::NonFiniteInput { .. } => ErrorKind::Io,
            _ => ErrorKind::Config,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
