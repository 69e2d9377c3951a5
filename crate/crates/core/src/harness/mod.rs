//! Experiment orchestration: few-shot sweeps comparing selection methods,
//! engineered-feature ensembles, feature nomination and the reports they
//! produce.
//!
//! A run is a pure function of its [`ExperimentConfig`], the seeds inside it
//! and the responses of the configured provider. With a recorded cache the
//! whole run replays offline and yields byte-identical reports.

mod config;
mod engineer;
mod nominate;
mod provider;
mod report;
mod run;
mod synthetic;

use thiserror::Error;

pub use config::{
    DatasetSource, ExperimentConfig, Method, Mode, OpenAiSettings, OracleSettings, ProviderSettings, ReplaySettings,
    ANCESTRY_SHOTS, HEARING_SHOTS,
};
pub use engineer::{run_engineering, ENSEMBLE, RAW, SINGLE};
pub use nominate::{nominate_features, nomination_prompt, Nomination, NOMINATION_TEMPERATURE};
pub use provider::build_provider;
pub use report::{
    mean_std, summarize, Artifacts, CacheProvenance, FeatureSetArtifact, Provenance, RunReport, ScoreRow,
    SelectionArtifact, SummaryRow, TaskSeed, CSV_HEADER,
};
pub use run::{
    llm_selections, load_experiment_data, run_experiment, run_full_pipeline, run_nomination, run_selection_compare,
    split_rows, task_plan, ExperimentData, Split, Task,
};
pub use synthetic::{generate_synthetic, variant_name, LabelRule, SyntheticSpec, SyntheticTruth};

use crate::baselines::BaselineError;
use crate::dataset::DatasetError;
use crate::engineering::EngineeringError;
use crate::llm::LlmError;
use crate::models::ModelError;
use crate::selection::SelectionError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unusable data: {0}")]
    Data(String),
    #[error("no variant identifiers could be parsed from the nomination reply")]
    NothingParsed,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Engineering(#[from] EngineeringError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
