use std::path::PathBuf;

use icci_core::CoreError;
use icci_model::ModelError;
use icci_sc::ScError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sc(#[from] ScError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed graymap: {0}")]
    Pgm(String),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("referenced file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("no trained parameters at {0}")]
    MissingParams(PathBuf),
    #[error("empty {0} grid")]
    EmptyGrid(&'static str),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
