use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the verification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("signature has {0} points, at least 2 are required")]
    EmptySignature(usize),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("sample {0} listed more than once in manifest")]
    DuplicateSample(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("train and test subject sets overlap on {0:?}")]
    Overlap(Vec<String>),

    #[error("subject {subject} has {available} genuine samples, {required} references requested")]
    InsufficientReferences {
        subject: String,
        available: usize,
        required: usize,
    },

    #[error("sequence length error: {0}")]
    Length(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("optimizer state does not match parameter {0}")]
    StateShape(String),

    #[error("loss mask selects no entries")]
    EmptyMask,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("preprocessing fingerprint mismatch: model {expected}, input {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("no subject mean for {0}")]
    MissingMean(String),

    #[error("subject {subject}: {message}")]
    InsufficientSamples { subject: String, message: String },

    #[error("no training pairs")]
    EmptyPairs,

    #[error("training pairs contain a single class")]
    SingleClass,

    #[error("reference set is empty")]
    EmptyReferences,

    #[error("bad decision threshold: {0}")]
    BadThreshold(String),

    #[error("score list is empty")]
    EmptyScores,

    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
