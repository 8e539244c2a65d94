use std::path::PathBuf;

use icci_core::CoreError;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("input dims {actual:?} do not match the architecture ({expected:?})")]
    DimMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("symbol count {actual} does not match the architecture's {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("architecture fingerprint mismatch: archive {found}, config {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("parameter {0} contains non-finite values")]
    NonFiniteParam(String),
    #[error("no (k, c_out) within 2x of target dcr {target} (best {best})")]
    NoFeasibleDcr { target: f64, best: f64 },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed archive manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.into(),
            source,
        }
    }
}
