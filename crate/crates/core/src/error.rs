use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dims mismatch: {0}")]
    DimsMismatch(String),
    #[error("bad layer dims: {0}")]
    BadDims(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("label vector has no positive entry")]
    EmptyLabel,
    #[error("run lengths sum to {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(&'static str),
    #[error("truncated record {index}: {reason}")]
    TruncatedRecord { index: usize, reason: String },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("record does not conform to manifest: {0}")]
    InvalidRecord(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no ground truth present for any evaluated class")]
    NoGroundTruth,
    #[error("bad generator spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
