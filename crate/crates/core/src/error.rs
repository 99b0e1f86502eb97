use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("failed to parse network spec {input:?}: {reason}")]
    Parse { input: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("video {id:?} has {frames} frames, need at least {needed}")]
    TooShort {
        id: String,
        frames: usize,
        needed: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value produced at {layer}")]
    NonFinite { layer: String },

    #[error("network has no discriminative code layer")]
    MissingCodeLayer,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn shape_mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
