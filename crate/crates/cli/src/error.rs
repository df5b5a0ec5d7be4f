use std::path::PathBuf;

use reqadapt::corpus::CorpusError;
use reqadapt::eval::EvalError;
use reqadapt::model::ModelError;
use reqadapt::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: expected {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            TrainError::Config(msg) => CliError::Config(msg),
            e @ (TrainError::StageOrder { .. } | TrainError::Model(ModelError::Architecture(_))) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Train(e),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Numerical(_) => 4,
            _ => 1,
        }
    }
}
