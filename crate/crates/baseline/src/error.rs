use icci_core::CoreError;
use icci_model::ModelError;

pub type Result<T, E = ScError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ScError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed bitstream: {0}")]
    MalformedBitstream(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("length {len} is not a multiple of {multiple}")]
    NotMultiple { len: usize, multiple: usize },
    #[error("{pilots} pilots are fewer than {taps} taps")]
    TooFewPilots { pilots: usize, taps: usize },
    #[error("stream of {len} symbols is shorter than the {min}-symbol window")]
    StreamTooShort { len: usize, min: usize },
    #[error("all-zero mask makes the projection singular")]
    SingularMask,
    #[error("domain mismatch: {0}")]
    Domain(String),
}
