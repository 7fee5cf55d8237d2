use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the lab.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An attack specification that violates its own contract
    /// (e.g. a clean-label attack whose source labels differ from the target).
    #[error("poison spec error: {0}")]
    Spec(String),

    /// A persisted artifact is malformed (missing manifest, bad layout).
    #[error("format error: {0}")]
    Format(String),

    /// A persisted payload does not match its recorded checksum.
    #[error("corruption error: {0}")]
    Corruption(String),

    /// Training left the finite-loss regime.
    #[error("training diverged (last stable epoch {last_stable_epoch})")]
    TrainingDiverged { last_stable_epoch: usize },

    /// Patch optimization produced a non-finite objective.
    #[error("optimization error: {0}")]
    Optimization(String),

    /// No training examples are predicted as the requested label.
    #[error("no examples predicted as label {label}")]
    EmptyClass { label: usize },

    /// Inspection could not produce a verdict (e.g. every label skipped).
    #[error("inspection failed: {0}")]
    InspectionFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn corruption(msg: impl Into<String>) -> Self {
        Error::Corruption(msg.into())
    }
}
