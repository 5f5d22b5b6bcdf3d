//! Error type shared by every stage of the extraction pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Embedding store
    #[error("bad magic in {path}: expected `{expected}`")]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },
    #[error("unsupported format version {version} in {path}")]
    VersionUnsupported { path: PathBuf, version: u16 },
    #[error("truncated file {path}: needed {needed} bytes after header, got {got}")]
    TruncatedFile {
        path: PathBuf,
        needed: u64,
        got: u64,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("vector norm below 1e-12, cannot normalize")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("duplicate record_id {0} in corpus")]
    DuplicateRecordId(u64),
    #[error("embedding_row {row} out of range for matrix with {count} rows")]
    RowOutOfRange { row: usize, count: usize },

    // Anchor normalization
    #[error("empty image")]
    EmptyImage,

    // Index
    #[error("too few points: have {points}, need at least {required}")]
    TooFewPoints { points: usize, required: usize },
    #[error("dimension {dim} not divisible by {m} sub-quantizers")]
    DimensionNotDivisible { dim: usize, m: usize },
    #[error("empty index")]
    EmptyIndex,
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),

    // Fetch and validation
    #[error("unreachable {url}: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("http status {status} for {url}")]
    HttpStatus { url: String, status: u16 },
    #[error("body for {url} exceeds cap of {cap} bytes")]
    TooLarge { url: String, cap: u64 },
    #[error("unknown image format")]
    UnknownFormat,
    #[error("corrupt image header: {0}")]
    CorruptHeader(String),

    // Pipeline
    #[error("missing exact embedding for record {record_id}")]
    MissingExactEmbedding { record_id: u64 },
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("missing content digest for record {record_id}")]
    MissingDigest { record_id: u64 },

    // Report
    #[error("anchors_total is zero")]
    ZeroAnchors,

    // Config
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing required config key `{0}`")]
    MissingRequired(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png codec error: {0}")]
    Png(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the CLI for exit codes and by the C ABI
    /// for status codes.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigParse { .. } | Error::UnknownKey(_) | Error::MissingRequired(_)
        )
    }
}
