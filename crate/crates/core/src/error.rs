//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("mask has no background pixels")]
    EmptyBackground,

    #[error("box [{row_min},{col_min},{row_max},{col_max}] exceeds {height}x{width} canvas")]
    OutOfBounds {
        row_min: usize,
        col_min: usize,
        row_max: usize,
        col_max: usize,
        height: usize,
        width: usize,
    },

    #[error("shape mismatch: {expected:?} vs {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("scribble has no labeled pixels")]
    NoLabeledPixels,

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("missing annotation file: {}", .0.display())]
    MissingAnnotation(PathBuf),

    #[error("corrupt image {}: {reason}", .path.display())]
    CorruptImage { path: PathBuf, reason: String },

    #[error(
        "size mismatch for {}: image is {image_h}x{image_w}, annotation is {ann_h}x{ann_w}",
        .path.display()
    )]
    SizeMismatch {
        path: PathBuf,
        image_h: usize,
        image_w: usize,
        ann_h: usize,
        ann_w: usize,
    },

    #[error("dataset {0:?} has no samples")]
    EmptyDataset(String),

    #[error("input size {height}x{width} must be divisible by {divisor}")]
    BadSize {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("non-finite loss at step {step} ({kind})")]
    NonFiniteLoss { step: u64, kind: String },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
