use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auroc, train_forest, train_logreg, AurocAverage, ForestParams, LogisticParams, ModelError, TrainedModel};
use crate::dataset::{stratified_folds, LabeledMatrix};
use crate::seeding::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logistic,
    Forest,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::Forest => "forest",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyper {
    Logistic { l2: f64 },
    Forest { n_trees: usize, max_depth: Option<usize> },
}

impl Hyper {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyper::Logistic { .. } => ClassifierKind::Logistic,
            Hyper::Forest { .. } => ClassifierKind::Forest,
        }
    }

    /// Larger means more regularized: stronger penalty or shallower trees.
    fn strength(&self) -> f64 {
        match self {
            Hyper::Logistic { l2 } => *l2,
            Hyper::Forest { max_depth, .. } => -(max_depth.map_or(f64::INFINITY, |d| d as f64)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub logistic_l2: Vec<f64>,
    pub forest_trees: usize,
    pub forest_depths: Vec<Option<usize>>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            logistic_l2: vec![0.01, 0.1, 1.0, 10.0],
            forest_trees: 100,
            forest_depths: vec![Some(3), Some(5), None],
        }
    }
}

impl SearchGrid {
    pub fn points(&self, kind: ClassifierKind) -> Vec<Hyper> {
        match kind {
            ClassifierKind::Logistic => self.logistic_l2.iter().map(|&l2| Hyper::Logistic { l2 }).collect(),
            ClassifierKind::Forest => self
                .forest_depths
                .iter()
                .map(|&max_depth| Hyper::Forest {
                    n_trees: self.forest_trees,
                    max_depth,
                })
                .collect(),
        }
    }

    /// Fallback when cross-validation is impossible.
    pub fn default_point(&self, kind: ClassifierKind) -> Hyper {
        match kind {
            ClassifierKind::Logistic => Hyper::Logistic { l2: 1.0 },
            ClassifierKind::Forest => Hyper::Forest {
                n_trees: self.forest_trees,
                max_depth: None,
            },
        }
    }
}

pub fn fit_model(m: &LabeledMatrix, hyper: &Hyper, seed: u64) -> Result<TrainedModel, ModelError> {
    match *hyper {
        Hyper::Logistic { l2 } => Ok(TrainedModel::Logistic(train_logreg(
            &m.x,
            &m.y,
            &m.class_names,
            &LogisticParams {
                l2,
                ..Default::default()
            },
        )?)),
        Hyper::Forest { n_trees, max_depth } => Ok(TrainedModel::Forest(train_forest(
            &m.x,
            &m.y,
            &m.class_names,
            &ForestParams {
                n_trees,
                max_depth,
                seed,
                ..Default::default()
            },
        )?)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyper,
    /// Mean validation AUROC per grid point, in grid order.
    pub scores: Vec<(Hyper, f64)>,
    pub folds: usize,
    pub warnings: Vec<String>,
}

/// Stratified `k`-fold search over `grid`, scored by mean validation AUROC.
/// Exact ties go to the more regularized point.
pub fn grid_search_cv(m: &LabeledMatrix, grid: &[Hyper], k: usize, seed: u64) -> Result<SearchResult, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let folds = stratified_folds(&m.y, k, seed)?;
    let mut warnings: Vec<String> = folds.warning.iter().cloned().collect();
    let fold_data: Vec<(LabeledMatrix, LabeledMatrix)> = folds
        .folds
        .iter()
        .map(|f| (m.subset_rows(&f.train), m.subset_rows(&f.validation)))
        .collect();
    let per_point: Vec<Result<f64, ModelError>> = grid
        .par_iter()
        .map(|h| {
            let mut total = 0.0;
            let mut used = 0;
            for (i, (train, valid)) in fold_data.iter().enumerate() {
                let model = fit_model(train, h, derive_seed(seed, &[0xCF, i as u64]))?;
                let p = model.predict_proba(valid.x.view());
                match auroc(&p, &valid.y, AurocAverage::Macro) {
                    Ok(a) => {
                        total += a;
                        used += 1;
                    }
                    Err(ModelError::DegenerateLabels(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                return Err(ModelError::DegenerateLabels(
                    "no fold had two validation classes".into(),
                ));
            }
            Ok(total / used as f64)
        })
        .collect();
    let mut scores = Vec::with_capacity(grid.len());
    for (h, r) in grid.iter().zip(per_point) {
        scores.push((*h, r?));
    }
    let best = scores
        .iter()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| a.0.strength().total_cmp(&b.0.strength()))
        })
        .map(|(h, _)| *h)
        .expect("non-empty grid");
    if folds.k() < k {
        warnings.push(format!("cross-validation used {} folds instead of {k}", folds.k()));
    }
    warnings.dedup();
    Ok(SearchResult {
        best,
        scores,
        folds: folds.k(),
        warnings,
    })
}
