use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {format} version {found} (expected {expected})")]
    UnsupportedVersion {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {format} payload: header declares {expected} bytes, found {found}")]
    Truncated {
        format: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{format} payload has {extra} trailing bytes beyond the declared size")]
    TrailingBytes { format: &'static str, extra: usize },

    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f32 },

    #[error("unit id {unit} at position {position} is out of range for K = {k}")]
    UnitOutOfRange { position: usize, unit: u32, k: u32 },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch for `{utterance_id}`: {units} units vs {frames} frames")]
    LengthMismatch {
        utterance_id: String,
        units: usize,
        frames: usize,
    },

    #[error("codebook size mismatch: units declare K = {units_k}, codebook has K = {codebook_k}")]
    CodebookSizeMismatch { units_k: u32, codebook_k: u32 },

    #[error("manifest line {line}: {message}")]
    ManifestRecord { line: usize, message: String },

    #[error("duplicate utterance_id `{0}` in manifest")]
    DuplicateUtterance(String),

    #[error("manifest line {line}: feature file {} is not readable", path.display())]
    UnresolvableFeaturePath { line: usize, path: PathBuf },

    #[error("k-means needs at least k = {k} frames, got {frames}")]
    NotEnoughFrames { frames: usize, k: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("every cluster is empty")]
    AllClustersEmpty,

    #[error("reference pool has no utterances")]
    EmptyPool,

    #[error("query length {len} outside indexed range [{min}, {max}]")]
    QueryLength { len: usize, min: usize, max: usize },

    #[error("reference pool was built with a different codebook")]
    FingerprintMismatch,

    #[error("predicted unit sequence is empty")]
    EmptySequence,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
