use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MimError>;

/// Every failure the library can surface.
#[derive(Debug, Error)]
pub enum MimError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("input too short: length {len} < kernel {kernel}")]
    InputTooShort { len: usize, kernel: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("region {region} of subject {subject:?} has non-finite values")]
    NonFiniteRegion { subject: String, region: usize },
    #[error("region {region} of subject {subject:?} has zero variance")]
    ZeroVariance { subject: String, region: usize },
    #[error("unstable generator: spectral radius {0} must be < 1")]
    Unstable(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("batch is inconsistent: {0}")]
    Batch(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("missing file {path} for subject {subject:?}")]
    MissingFile { subject: String, path: PathBuf },
    #[error("{path}:{line}: ragged row (expected {expected} columns, found {found})")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: non-numeric cell {cell:?}")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        cell: String,
    },
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("heterogeneous dataset: subject {subject:?} has shape {found:?}, expected {expected:?}")]
    Heterogeneous {
        subject: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint manifest mismatch: {0}")]
    CheckpointManifest(String),
    #[error("checkpoint config mismatch: {0}")]
    CheckpointConfig(String),
    #[error("checkpoint payload truncated: expected {expected} bytes, found {found}")]
    CheckpointTruncated { expected: usize, found: usize },
    #[error("checkpoint checksum mismatch")]
    CheckpointChecksum,
    #[error("checkpoint {0} does not exist")]
    MissingCheckpoint(PathBuf),
    #[error("not a checkpoint file")]
    CheckpointMagic,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
