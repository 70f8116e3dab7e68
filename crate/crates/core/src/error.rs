use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("target index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("cosine {value} at index {index} lies outside [-1, 1]; embeddings are probably not normalized")]
    CosineOutOfRange { index: usize, value: f64 },

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite loss, gradient or parameter at optimizer step {step}")]
    NonFiniteLoss { step: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("score set is empty (targets: {n_target}, non-targets: {n_nontarget})")]
    EmptyScores { n_target: usize, n_nontarget: usize },

    #[error("centered embedding has (near) zero norm")]
    ZeroVector,

    #[error("trial references unknown utterance {0}")]
    MissingEmbedding(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown run `{0}`")]
    UnknownRun(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
