//! Crate-wide error type.

use std::io;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad field value, violated cross-field
    /// constraint, unknown key, ...). Parser errors embed the line number.
    #[error("config error: {0}")]
    Config(String),

    /// A step index outside the schedule's domain.
    #[error("step {step} outside schedule range 0..={last}")]
    StepOutOfRange { step: u64, last: u64 },

    /// A NaN or infinity showed up where a finite value was required.
    /// `context` names the layer or quantity that produced it.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A pair loss handed to the hardest-pair selector was NaN or infinite.
    #[error("non-finite loss {value} for pair ({i},{j})")]
    NonFiniteLoss { i: usize, j: usize, value: f64 },

    /// Selection failed for one sample of a batch; wraps the underlying error.
    #[error("selection failed for sample {sample}: {source}")]
    Selection {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    /// The FLOPs profile has no entry for a resolution the plan needs.
    #[error("no flops entry for resolution {resolution} (add a measurement or enable quadratic fill)")]
    MissingResolution { resolution: u32 },

    /// Tensor shapes disagree.
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// The training loop hit an unrecoverable error at a given iteration.
    /// Metrics for completed epochs have already been handed to the sink.
    #[error("training aborted at iteration {iteration}: {source}")]
    Training {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    /// Config error carrying the 1-based line it was found on.
    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config(format!("line {line}: {}", message.into()))
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
