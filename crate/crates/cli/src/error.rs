use std::path::PathBuf;

use byseer_core::calibrate::CalibrateError;
use byseer_core::corpus::CorpusError;
use byseer_core::evalbench::EvalError;
use byseer_core::model::ModelError;
use byseer_core::registry::RegistryError;
use byseer_core::trainer::TrainError;
use thiserror::Error;

pub const EXIT_IO: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_EVAL: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no input files")]
    NoInputs,
    #[error("cannot load model {path}: {source}")]
    ModelLoad { path: PathBuf, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// Some inputs failed; their records were already reported.
    #[error("{0} input(s) could not be read")]
    PartialFailure(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::NoInputs => EXIT_USAGE,
            CliError::ModelLoad { .. } | CliError::Model(_) => EXIT_MODEL,
            CliError::Registry(_) | CliError::Corpus(_) | CliError::Train(_) | CliError::Calibrate(_) => EXIT_DATA,
            CliError::Eval(_) => EXIT_EVAL,
            CliError::Io { .. } | CliError::PartialFailure(_) => EXIT_IO,
        }
    }
}

pub fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
