use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("zero matrix has no direction")]
    ZeroDecoder,

    #[error("non-finite value encountered at iteration {iter}")]
    NonFinite { iter: usize },

    #[error("solver undecided after {iterations} iterations")]
    Undecided { iterations: usize },

    #[error("no embedding known for context {0:?}")]
    MissingEmbedding(Vec<u32>),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
