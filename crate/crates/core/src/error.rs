use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing file for sample `{sample}`: {}", path.display())]
    MissingFile { sample: String, path: PathBuf },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label out of range in sample `{sample}`: value {value} exceeds {max}")]
    LabelOutOfRange { sample: String, value: usize, max: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("invalid loss weights: alpha={alpha}, beta={beta}")]
    InvalidWeights { alpha: f64, beta: f64 },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("non-finite loss in batch [{0}]")]
    NonFiniteLoss(String),

    #[error("class activation map is identically zero")]
    AllZeroMap,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("png: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
