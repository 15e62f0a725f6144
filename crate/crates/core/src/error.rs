use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("numeric failure: non-finite values in {0}")]
    NumericFailure(String),

    #[error("degenerate gradient segment(s) under cosine distance: {0:?}")]
    DegenerateSegment(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} at index {index} is outside [0, {classes})")]
    InvalidLabel {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    MagicMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("class {class} has {size} samples, fewer than the {needed} required")]
    ClassTooSmall {
        class: usize,
        size: usize,
        needed: usize,
    },

    #[error("cluster {cluster} has {size} samples, fewer than the {needed} required")]
    ClusterTooSmall {
        cluster: usize,
        size: usize,
        needed: usize,
    },

    #[error("training diverged at epoch {epoch}; last finite checkpoint is epoch {last_finite}")]
    Diverged { epoch: usize, last_finite: usize },

    #[error("rank-deficient design matrix: rank {rank}, need {needed}")]
    RankDeficient { rank: usize, needed: usize },

    #[error("missing oracle model(s) for cluster(s) {0:?}")]
    MissingOracle(Vec<usize>),

    #[error("objective {0} needs a reference that was not supplied")]
    MissingReference(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("{path} was produced with config {found}, current config is {expected}; use --force to overwrite")]
    ConfigHashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
