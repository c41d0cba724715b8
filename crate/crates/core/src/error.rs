use std::path::PathBuf;

/// Errors produced by the relevance toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape {shape:?} implies {expected} elements but data has {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("shape must have at least one axis and only positive extents, got {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("layer {layer}: expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer {layer}: non-finite activation in forward pass")]
    NonFiniteActivation { layer: usize },

    #[error("input shape {actual:?} does not match network input shape {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("activation trace does not belong to this network: {0}")]
    TraceMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed model manifest: {0}")]
    Manifest(String),

    #[error("weight blob length mismatch: expected {expected} bytes, found {actual}")]
    BlobLength { expected: usize, actual: usize },

    #[error("weight blob inconsistent with layer shapes: layers need {needed} floats, blob carries {carried}")]
    BlobShape { needed: usize, carried: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("score {0} outside the rating range [1, 9]")]
    ScoreRange(f64),

    #[error("non-finite gradient component {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("occlusion spec {spec}, region {region}: {message}")]
    Region {
        spec: usize,
        region: usize,
        message: String,
    },

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
