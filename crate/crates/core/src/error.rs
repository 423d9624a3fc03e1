use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: not a cube file (expected magic {expected:?}, found {found:?})", path.display())]
    NotACubeFile {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{}: unsupported container version {version}", path.display())]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("{}: corrupt cube ({detail})", path.display())]
    CorruptCube { path: PathBuf, detail: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate mask at ({i},{j}): sum of squared transmittances is zero")]
    DegenerateMask { i: usize, j: usize },

    #[error("transmittance out of range at ({i},{j},{k}): {value}")]
    TransmittanceOutOfRange {
        i: usize,
        j: usize,
        k: usize,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm spectrum: normalization undefined")]
    ZeroNorm,

    #[error("no edges detected in the reference cube")]
    NoEdges,

    #[error("empty partition: {0}")]
    EmptyPartition(&'static str),

    #[error("grid outside CMF support: {0}")]
    OutsideCmfSupport(String),

    #[error("unknown tensor {0}")]
    UnknownTensor(String),

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("truncated file: weights payload ended early ({0})")]
    TruncatedWeights(String),

    #[error("not a weights file: bad magic {0:?}")]
    NotAWeightsFile(String),

    #[error("learned denoiser selected but no weights loaded")]
    MissingWeights,

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
