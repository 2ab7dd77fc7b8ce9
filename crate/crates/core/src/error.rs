use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix still not positive definite after {escalations} shrinkage escalations (last shift {last_shift:e})")]
    ShrinkageFailed { escalations: usize, last_shift: f64 },

    #[error("precision oracle did not converge after {steps} steps (gradient norm {grad_norm:e})")]
    OracleDidNotConverge { steps: usize, grad_norm: f64 },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("invalid class-weight assignment for sample {sample}: {reason}")]
    Assignment { sample: usize, reason: String },

    #[error("invalid batch: {0}")]
    Batch(String),

    #[error("dataset generation failed: {0}")]
    Gen(String),

    #[error("{path}: record {record}: {reason}")]
    Format {
        path: PathBuf,
        record: usize,
        reason: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: non-finite {what}")]
    Divergence {
        epoch: usize,
        step: usize,
        what: &'static str,
    },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user configuration rather than a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
