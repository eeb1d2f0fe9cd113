use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FairRagError {
    #[error("malformed JSONL at {path}:{line}: {source}")]
    MalformedJsonl {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("duplicate doc_id `{0}`")]
    DuplicateDocId(String),

    #[error("document `{0}` has an empty body")]
    EmptyBody(String),

    #[error("invalid chunker config: overlap {overlap} must be < chunk_size {chunk_size}")]
    InvalidChunkerConfig { chunk_size: usize, overlap: usize },

    #[error("empty chunk store")]
    EmptyStore,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector: cosine similarity undefined")]
    ZeroNormVector,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("distribution support mismatch")]
    SupportMismatch,

    #[error("unknown chunk_id `{0}`")]
    UnknownChunk(String),

    #[error("backend does not support token log-probabilities")]
    NoLogprobSupport,

    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },

    #[error("gateway error for chunk `{chunk_id}`: {source}")]
    ChunkGateway {
        chunk_id: String,
        #[source]
        source: Box<FairRagError>,
    },

    #[error("non-finite gradient at step {step}: {detail}")]
    NonFiniteGradient { step: usize, detail: String },

    #[error("bad file format in {path}: {detail}")]
    BadFormat { path: PathBuf, detail: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FairRagError>;
