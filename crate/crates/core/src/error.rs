//! Error type shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate embedding: trunk output has zero norm")]
    DegenerateEmbedding,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("input too short: got {got} frames, need at least {needed}")]
    TooShort { needed: usize, got: usize },

    #[error("batch construction failed: {0}")]
    BatchConstruction(String),

    #[error("inconsistent artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI's error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::DegenerateEmbedding => "degenerate_embedding",
            Error::Config(_) => "config",
            Error::Capacity(_) => "capacity",
            Error::MetricUndefined(_) => "metric_undefined",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::TooShort { .. } => "too_short",
            Error::BatchConstruction(_) => "batch_construction",
            Error::Artifact(_) => "artifact",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
