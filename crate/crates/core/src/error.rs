use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}: malformed record: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unknown label: {0:?}")]
    UnknownLabel(String),

    #[error("unknown task: {0:?}")]
    UnknownTask(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid intervention: {0}")]
    Intervention(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no tokens recorded for label {0}")]
    EmptyLabel(String),

    #[error("layer {0} has no non-target neurons")]
    NoNonTargetNeurons(usize),

    #[error("nothing to select: {0}")]
    NothingToSelect(String),

    #[error("not a {kind} file")]
    BadMagic { kind: &'static str },

    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("truncated {kind} file")]
    Truncated { kind: &'static str },

    #[error("{kind} does not match the model configuration")]
    ConfigMismatch { kind: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
