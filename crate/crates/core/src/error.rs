use thiserror::Error;

/// Errors shared across the stitching pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("transform is singular (|det| <= {0:e})")]
    SingularTransform(f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("condition masks do not overlap")]
    NoOverlap,

    #[error("no valid affine found after {attempts} rejection attempts")]
    NoValidAffine { attempts: usize },

    #[error("insufficient features: found {found}, need at least {needed}")]
    InsufficientFeatures { found: usize, needed: usize },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
