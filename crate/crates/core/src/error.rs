//! Error types shared across the crate.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by
//! failure class so the CLI can map them onto stable exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside its documented range.
    #[error("{name} = {value} is outside [{min}, {max}]")]
    Domain {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    /// Structurally invalid input: shape mismatches, empty batches,
    /// inconsistent configuration.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced or received a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The training loop produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: {message}")]
    TrainingDiverged { iteration: usize, message: String },

    /// Config file could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures specific to the binary checkpoint format.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Helper for range checks on scalar arguments.
    pub fn check_range(name: &'static str, value: f64, min: f64, max: f64) -> Result<f64> {
        if !value.is_finite() || value < min || value > max {
            return Err(Error::Domain {
                name,
                value,
                min,
                max,
            });
        }
        Ok(value)
    }
}
