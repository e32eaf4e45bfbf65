use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {0} is not recorded on this tape")]
    UnknownNode(usize),

    #[error("backward seed must be a scalar, got shape {0:?}")]
    NonScalarSeed(Vec<usize>),

    #[error("activation trace already consumed; run a new traced forward pass")]
    TraceConsumed,

    #[error("gradients missing for ReLU layer {0}; call backprop_category first")]
    MissingGradients(String),

    #[error("missing suppression mask for ReLU layer {0}")]
    MissingMask(String),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("unknown layer {0}")]
    UnknownLayer(String),

    #[error("shape mismatch at layer {layer}: expected {expected:?}, found {found:?}")]
    WeightShape {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category used in the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) | Error::WeightShape { .. } => "shape",
            Error::NonFinite(_) | Error::Divergence { .. } => "numeric",
            Error::InvalidArgument(_) => "argument",
            Error::UnknownNode(_) | Error::NonScalarSeed(_) => "tape",
            Error::TraceConsumed | Error::MissingGradients(_) | Error::MissingMask(_) => "pipeline",
            Error::Spec(_) | Error::UnknownLayer(_) => "spec",
            Error::WeightFormat(_) => "weights",
            Error::EmptyDataset | Error::Dataset(_) => "dataset",
            Error::Config(_) => "config",
            Error::Image { .. } => "image",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
