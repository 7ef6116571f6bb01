use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {block} layer {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        block: String,
        layer: usize,
        expected: String,
        got: String,
    },
    #[error("non-finite value in block {block}")]
    NonFinite { block: String },
    #[error("treatment {value} outside domain ({mode})")]
    TreatmentDomain { value: f64, mode: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no eligible neighbor for anchor {anchor}")]
    NoEligibleNeighbor { anchor: usize },
    #[error("pair dataset is empty: no anchor had an eligible neighbor")]
    EmptyPairDataset,
    #[error("dataset carries no ground truth")]
    MissingGroundTruth,
    #[error("cholesky factorization failed up to jitter {jitter:e}")]
    Factorization { jitter: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
