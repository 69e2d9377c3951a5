//! Knowledge-driven feature selection and feature engineering for genotype
//! tables, using a language model as the source of prior knowledge.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: genotype tables, text serialization, few-shot sampling, folds
//! - [`llm`]: provider abstraction, HTTP client, JSONL cache, offline providers
//! - [`selection`]: relevance filtering, hierarchical and sequential selection
//! - [`engineering`]: prompt assembly, expression DSL, feature-set generation
//! - [`models`]: logistic regression, random forest, ensembles, AUROC, grid search
//! - [`baselines`]: LASSO, PCA and Gini-importance selection
//! - [`harness`]: experiment orchestration and reports
//!
//! Everything that talks to a language model goes through [`llm::LlmProvider`],
//! so the whole pipeline runs offline against [`llm::OracleProvider`] or a
//! recorded cache.

pub mod baselines;
pub mod dataset;
pub mod engineering;
pub mod harness;
pub mod llm;
pub mod models;
pub mod selection;

mod error;
pub mod seeding;

pub use dataset::{GenotypeDataset, LabeledMatrix, SerializationStyle, SerializationTemplate};
pub use engineering::{EngineeringConfig, FeatureExpr, FeatureSet};
pub use error::{Error, ErrorCategory};
pub use llm::{CompletionResponse, LlmProvider, PromptRequest, PromptTag};
pub use models::{EnsembleModel, ForestModel, LogisticModel, TrainedModel};
pub use selection::{SelectionConfig, SelectionResult};
