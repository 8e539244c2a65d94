use std::path::PathBuf;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid tensor dims {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("payload length {actual} does not match dims volume {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dims mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("tensor contains non-finite values")]
    NonFinite,

    #[error("malformed magic bytes {0:02x?}")]
    MalformedMagic(Vec<u8>),
    #[error("unsupported dtype code {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("dimension overflow in header")]
    DimOverflow,
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("scene dims too small: {0:?} (each must be at least 8)")]
    SceneTooSmall(Vec<usize>),
    #[error("heterogeneous dataset dims: {first:?} vs {other:?} in {path}")]
    HeterogeneousDims {
        first: Vec<usize>,
        other: Vec<usize>,
        path: PathBuf,
    },
    #[error("empty dataset in {0}")]
    EmptyDataset(PathBuf),

    #[error("invalid Bernoulli probability {0}")]
    InvalidProbability(f64),
    #[error("sensing model mismatch: {0}")]
    SensingMismatch(String),
    #[error("sensing matrix too large: {0} nonzeros exceed the explicit-storage guard")]
    MatrixTooLarge(usize),

    #[error("all-zero symbol stream cannot be power normalized")]
    ZeroStream,
    #[error("isi channel requires real-valued symbols")]
    ComplexIsi,
    #[error("invalid channel spec: {0}")]
    InvalidChannel(String),

    #[error("length mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("image too small for the SSIM window: {0}x{1}")]
    SsimTooSmall(usize, usize),

    #[error("config parse error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
