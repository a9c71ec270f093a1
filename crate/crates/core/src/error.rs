use crate::analysis::AnalysisError;
use crate::evaluator::EvalError;
use crate::extraction::ExtractionError;
use crate::gateway::GatewayError;
use crate::model::{DatasetError, ModelError, SplitError};
use crate::prompt::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
