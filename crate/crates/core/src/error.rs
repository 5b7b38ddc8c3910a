use std::path::PathBuf;

/// Errors raised across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image too small: {height}x{width}, need at least {min} on each side")]
    ImageTooSmall { height: usize, width: usize, min: usize },
    #[error("input too small: {height}x{width}, need at least {min} on each side")]
    InputTooSmall { height: usize, width: usize, min: usize },
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("metric `{0}` is not registered")]
    MissingMetric(String),
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("patch size {patch} does not fit a {height}x{width} image")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("insufficient perceptual levels: {0}")]
    InsufficientLevels(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("a ranker is required when the rank-content weight is positive")]
    MissingRanker,
    #[error("malformed training log: {0}")]
    MalformedLog(String),
    #[error("missing run `{0}`")]
    MissingRun(String),
    #[error("external scorer failed: {0}")]
    ExternalScorer(String),
    #[error("invalid checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidImage(_) => "InvalidImage",
            Error::ImageTooSmall { .. } => "ImageTooSmall",
            Error::InputTooSmall { .. } => "InputTooSmall",
            Error::DegenerateStatistics(_) => "DegenerateStatistics",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::MissingMetric(_) => "MissingMetric",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::PatchTooLarge { .. } => "PatchTooLarge",
            Error::InsufficientLevels(_) => "InsufficientLevels",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
            Error::Alignment(_) => "AlignmentError",
            Error::MissingRanker => "MissingRanker",
            Error::MalformedLog(_) => "MalformedLog",
            Error::MissingRun(_) => "MissingRun",
            Error::ExternalScorer(_) => "ExternalScorer",
            Error::Checkpoint { .. } => "Checkpoint",
            Error::Config(_) => "Config",
            Error::Manifest(_) => "Manifest",
            Error::Io { .. } => "Io",
            Error::Decode { .. } => "Decode",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
