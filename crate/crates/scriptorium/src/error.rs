//! Error types shared across the pipeline.

use std::path::PathBuf;

use thiserror::Error;

/// Top-level error for all pipeline operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image at {path} could not be {action}: {source}")]
    ImageIo {
        path: PathBuf,
        action: &'static str,
        source: image::ImageError,
    },

    #[error("expected a 3-channel image, got {0} channel(s)")]
    NotRgb(u8),

    #[error("expected a single-channel image, got {0} channel(s)")]
    NotGrayscale(u8),

    #[error("invalid patch spec: {0}")]
    InvalidPatchSpec(String),

    #[error("patch extraction expects image height {expected}, got {actual}")]
    PatchHeightMismatch { expected: usize, actual: usize },

    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),

    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),

    #[error("patch shape {actual} does not match model input {expected}")]
    PatchShapeMismatch { expected: String, actual: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite loss at batch sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}; {completed} epoch(s) completed")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        completed: usize,
        history: Vec<crate::classifier::EpochStats>,
    },

    #[error("score vector is not on the probability simplex: {0}")]
    InvalidScoreVector(String),

    #[error("{context}: empty score sequence")]
    EmptyScores { context: &'static str },

    #[error("score vectors have mixed lengths: {0} vs {1}")]
    ScoreLengthMismatch(usize, usize),

    #[error("threshold grid invalid: {0}")]
    InvalidThresholdGrid(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("manifest {path}: {problem}")]
    Manifest { path: PathBuf, problem: String },

    #[error("manifest row {row} ({line_id}): {problem}")]
    ManifestRow {
        row: usize,
        line_id: String,
        problem: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("class {class} has no separate codex; cross-codex evaluation impossible")]
    NoSeparateCodex { class: String },

    #[error("class {class} has no training codex")]
    NoTrainingCodex { class: String },

    #[error("invalid synthesis config: {0}")]
    InvalidSynthConfig(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Checkpoint decode failures. Each corruption class gets its own variant so
/// callers can tell a wrong file from a damaged one.
#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic: expected \"SCRB\", got {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u16),

    #[error("checkpoint config is inconsistent: {0}")]
    ShapeInconsistency(String),

    #[error("checkpoint truncated: needed {needed} more byte(s) while reading {reading}")]
    Truncated { reading: &'static str, needed: usize },

    #[error("checkpoint has {0} trailing byte(s) after the weight block")]
    TrailingBytes(usize),

    #[error("checkpoint contains a non-finite value in {0}")]
    NonFiniteValue(&'static str),
}
