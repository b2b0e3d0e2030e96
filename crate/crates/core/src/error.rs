use std::path::PathBuf;

use crate::config::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("domain label {label} out of range for {num_domains} domains")]
    LabelOutOfRange { label: usize, num_domains: usize },

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("path not found: {0}")]
    PathNotFound(PathBuf),

    #[error("fewer than 2 domains under {root} (found {found})")]
    TooFewDomains { root: PathBuf, found: usize },

    #[error("domain `{domain}` has no usable training images")]
    EmptyDomain { domain: String },

    #[error("domain `{domain}` needs at least {needed} training images, has {found}")]
    TooFewImages {
        domain: String,
        needed: usize,
        found: usize,
    },

    #[error("domain `{domain}` has an empty test split")]
    EmptyTestSplit { domain: String },

    #[error("test fraction must lie in [0, 1), got {0}")]
    BadTestFraction(f64),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint archive: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("domain branch-count mismatch: checkpoint has {checkpoint} domains, configuration expects {expected}")]
    DomainCount { checkpoint: usize, expected: usize },

    #[error("architecture mismatch on `{key}`: checkpoint has {checkpoint}, configuration has {expected}")]
    Architecture {
        key: String,
        checkpoint: String,
        expected: String,
    },

    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),

    #[error("checkpoint has unexpected tensor `{0}`")]
    UnexpectedTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}
