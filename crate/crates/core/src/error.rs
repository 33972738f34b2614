use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // -- ingestion --
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("truncated file: need {expected} voxel bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("raw size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("degenerate intensity window ({lo}, {hi})")]
    DegenerateWindow { lo: f64, hi: f64 },
    #[error("dimension {dim} is smaller than superpatch edge {edge}")]
    TooSmall { dim: usize, edge: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    // -- tokenization / masking --
    #[error("{value} is not divisible by {divisor}")]
    NotDivisible { value: usize, divisor: usize },
    #[error("malformed token grid: {0}")]
    MalformedTokenGrid(String),
    #[error("bad embedding dimension {0}: must be divisible by 6")]
    BadDim(usize),
    #[error("ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("mask grid {plan:?} does not match token grid {tokens:?}")]
    GridMismatch {
        plan: (usize, usize, usize),
        tokens: (usize, usize, usize),
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    // -- numerics --
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("loss selection is empty")]
    EmptySelection,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    // -- checkpoints --
    #[error("checkpoint format version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("corrupt checkpoint block: {0}")]
    CorruptBlock(String),

    // -- metrics --
    #[error("slice {width}x{height} smaller than the 11x11 SSIM window")]
    SliceTooSmall { width: usize, height: usize },
    #[error("mask selects no voxels")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::IoPath {
            path: path.into(),
            source,
        }
    }
}
