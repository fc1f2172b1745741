use std::path::PathBuf;

use conekp_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),

    #[error(transparent)]
    Annotation(#[from] AnnotationError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("non-positive disparity {disparity:.6} px (cone behind the rig or at infinity)")]
    NonPositiveDisparity { disparity: f64 },

    #[error("point depth must be positive, got {depth}")]
    NonPositiveDepth { depth: f64 },

    #[error("keypoint {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    KeypointOutsideImage {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {needed} items to split, got {found}")]
    TooFewItems { needed: usize, found: usize },

    #[error("non-finite loss at step {step} (epoch {epoch})")]
    NonFiniteLoss { step: u64, epoch: u32 },

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Validation failures of a single annotation document.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("malformed annotation document: {0}")]
    Malformed(String),

    #[error("missing field `{field}`")]
    MissingField { field: String },

    #[error("field `keypoints`: expected 6 keypoints, found {found}")]
    KeypointCount { found: usize },

    #[error("field `keypoints[{index}]`: ({x}, {y}) outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("field `keypoints[{index}]`: coordinates must be finite")]
    NonFinite { index: usize },

    #[error("field `{field}`: {detail}")]
    InvalidField { field: String, detail: String },
}

impl AnnotationError {
    /// Name of the offending field, for client-facing messages.
    pub fn field(&self) -> String {
        match self {
            AnnotationError::Malformed(_) => "document".into(),
            AnnotationError::MissingField { field } | AnnotationError::InvalidField { field, .. } => field.clone(),
            AnnotationError::KeypointCount { .. } => "keypoints".into(),
            AnnotationError::OutOfBounds { index, .. } | AnnotationError::NonFinite { index } => {
                format!("keypoints[{index}]")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),

    #[error("shape mismatch for tensor `{name}`: model expects {expected:?}, checkpoint has {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint has no tensor named `{0}`")]
    MissingTensor(String),

    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
