//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by schedule construction, score evaluation, sampling
/// loops, analysis, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A noise schedule or schedule request violated its invariants.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// A sampler or run configuration field is out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A step index fell outside `1..=T`.
    #[error("step index {t} outside valid range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    /// Latent/score dimension mismatch.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A condition label referenced a component the model does not have.
    #[error("condition label {label} out of range (model has {num_components} components)")]
    BadCondition { label: usize, num_components: usize },

    /// Training was asked to run on an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// Training produced a non-finite loss.
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    /// A trajectory record lacks the instrumentation an analysis needs.
    #[error("trajectory lacks required instrumentation: {0}")]
    MissingInstrumentation(String),

    /// A per-row latent-gap identity check failed inside a run.
    #[error("identity check failed: {0}")]
    IdentityCheckFailed(String),

    /// I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Checkpoint or record (de)serialization failure.
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
