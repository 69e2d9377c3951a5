use thiserror::Error;

use crate::baselines::BaselineError;
use crate::dataset::DatasetError;
use crate::engineering::{DslError, EngineeringError};
use crate::harness::HarnessError;
use crate::llm::LlmError;
use crate::models::ModelError;
use crate::selection::SelectionError;

/// Coarse classification of failures, used by the command line to pick an
/// exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad configuration or flags.
    Config,
    /// Unreadable, malformed or degenerate input data.
    Data,
    /// The language-model provider failed or returned nothing usable.
    Provider,
    /// Anything else, such as failing to write outputs.
    Runtime,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Provider => 4,
            ErrorCategory::Runtime => 1,
        }
    }
}

/// Any error the library can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Engineering(#[from] EngineeringError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dataset(_) => ErrorCategory::Data,
            Error::Llm(e) => llm_category(e),
            Error::Selection(e) => selection_category(e),
            Error::Engineering(e) => engineering_category(e),
            Error::Dsl(_) => ErrorCategory::Provider,
            Error::Model(e) => model_category(e),
            Error::Baseline(e) => baseline_category(e),
            Error::Harness(e) => harness_category(e),
        }
    }
}

fn llm_category(e: &LlmError) -> ErrorCategory {
    match e {
        LlmError::InvalidConfig(_) => ErrorCategory::Config,
        _ => ErrorCategory::Provider,
    }
}

fn selection_category(e: &SelectionError) -> ErrorCategory {
    match e {
        SelectionError::Llm(e) => llm_category(e),
        SelectionError::Config(_) => ErrorCategory::Config,
        SelectionError::TooFewVariants { .. } => ErrorCategory::Data,
        SelectionError::AllRoundsUnparsable { .. } | SelectionError::SelectionStalled { .. } => ErrorCategory::Provider,
    }
}

fn engineering_category(e: &EngineeringError) -> ErrorCategory {
    match e {
        EngineeringError::Llm(e) => llm_category(e),
        EngineeringError::Config(_) => ErrorCategory::Config,
        EngineeringError::NothingExtracted => ErrorCategory::Provider,
        EngineeringError::TooManyExamples { .. }
        | EngineeringError::NoFeatures
        | EngineeringError::AliasOutOfRange { .. }
        | EngineeringError::Dataset(_) => ErrorCategory::Data,
    }
}

fn model_category(e: &ModelError) -> ErrorCategory {
    match e {
        ModelError::EmptyGrid => ErrorCategory::Config,
        ModelError::Engineering(e) => engineering_category(e),
        ModelError::Io(_) => ErrorCategory::Runtime,
        _ => ErrorCategory::Data,
    }
}

fn baseline_category(e: &BaselineError) -> ErrorCategory {
    match e {
        BaselineError::Model(e) => model_category(e),
        _ => ErrorCategory::Data,
    }
}

fn harness_category(e: &HarnessError) -> ErrorCategory {
    match e {
        HarnessError::Config(_) => ErrorCategory::Config,
        HarnessError::Data(_) => ErrorCategory::Data,
        HarnessError::NothingParsed => ErrorCategory::Provider,
        HarnessError::Io { .. } => ErrorCategory::Runtime,
        HarnessError::Dataset(_) => ErrorCategory::Data,
        HarnessError::Llm(e) => llm_category(e),
        HarnessError::Selection(e) => selection_category(e),
        HarnessError::Engineering(e) => engineering_category(e),
        HarnessError::Model(e) => model_category(e),
        HarnessError::Baseline(e) => baseline_category(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg: Error = HarnessError::Config("bad".into()).into();
        assert_eq!(cfg.category().exit_code(), 2);
        let data: Error = DatasetError::MissingHeader.into();
        assert_eq!(data.category().exit_code(), 3);
        let llm: Error = LlmError::RateLimited { attempts: 3 }.into();
        assert_eq!(llm.category().exit_code(), 4);
        let nested: Error = HarnessError::Selection(SelectionError::Llm(LlmError::InvalidConfig("x".into()))).into();
        assert_eq!(nested.category(), ErrorCategory::Config);
    }
}
