use std::path::PathBuf;

/// Errors produced anywhere in the segmentation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("failed to parse annotations: {0}")]
    AnnotationParse(String),

    #[error("annotation {annotation} references missing image id {image_id}")]
    DanglingImage { annotation: u64, image_id: u64 },

    #[error("annotation {annotation} has a polygon with {len} coordinates (need an even count >= 6)")]
    BadPolygon { annotation: u64, len: usize },

    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: PathBuf, reason: String },

    #[error("invalid fold plan: {0}")]
    FoldPlan(String),

    #[error("config error at key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version: expected {expected}, found {found}")]
    Version { expected: String, found: String },

    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite loss at step {step}; first non-finite gradient in `{param}`")]
    NonFiniteLoss { step: u64, param: String },

    #[error("report schema mismatch: {0}")]
    Schema(String),

    #[error("{failed} of {total} images could not be prepared")]
    PartialIngest { failed: usize, total: usize },

    #[error("no samples: {0}")]
    NoSamples(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
