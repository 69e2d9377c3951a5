//! Downstream classifiers, probability-averaging ensembles, AUROC and
//! cross-validated grid search.
//!
//! Every model maps an `n × m` real matrix to `n × C` class probabilities in
//! the class order it was trained with.

mod ensemble;
mod forest;
mod logistic;
mod metrics;
mod search;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ensemble::{argmax_lowest, ensemble_predict, EnsembleMember, EnsembleModel};
pub use forest::{gini, train_forest, weighted_gini, ForestModel, ForestParams, Node, Tree};
pub use logistic::{logistic_loss_and_grad, train_logreg, LogisticModel, LogisticParams};
pub use metrics::{auroc, binary_auroc, AurocAverage};
pub use search::{fit_model, grid_search_cv, ClassifierKind, Hyper, SearchGrid, SearchResult};

use crate::dataset::DatasetError;
use crate::engineering::{EngineeringError, FeatureSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClassTrainingSet,
    #[error("AUROC undefined: {0}")]
    DegenerateLabels(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("model envelope: {0}")]
    Envelope(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Engineering(#[from] EngineeringError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Logistic(LogisticModel),
    Forest(ForestModel),
}

impl TrainedModel {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            TrainedModel::Logistic(m) => m.predict_proba(x),
            TrainedModel::Forest(m) => m.predict_proba(x),
        }
    }

    pub fn class_order(&self) -> &[String] {
        match self {
            TrainedModel::Logistic(m) => &m.class_order,
            TrainedModel::Forest(m) => &m.class_order,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            TrainedModel::Logistic(m) => m.n_inputs(),
            TrainedModel::Forest(m) => m.n_inputs,
        }
    }
}

pub const ENVELOPE_VERSION: u32 = 1;

/// Versioned on-disk form of a trained model, optionally with the feature
/// set its inputs were built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub version: u32,
    pub columns: Vec<String>,
    pub model: TrainedModel,
    #[serde(default)]
    pub feature_set: Option<FeatureSet>,
}

impl ModelEnvelope {
    pub fn new(columns: Vec<String>, model: TrainedModel, feature_set: Option<FeatureSet>) -> Self {
        Self {
            version: ENVELOPE_VERSION,
            columns,
            model,
            feature_set,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ModelError::Envelope(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let env: Self = serde_json::from_str(&text).map_err(|e| ModelError::Envelope(e.to_string()))?;
        if env.version != ENVELOPE_VERSION {
            return Err(ModelError::Envelope(format!("unsupported version {}", env.version)));
        }
        Ok(env)
    }
}
