use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedModel};
use crate::dataset::LabeledMatrix;
use crate::engineering::{transform_matrix, FeatureSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub feature_set: FeatureSet,
    pub model: TrainedModel,
}

/// Members trained on differently augmented copies of the same base columns.
/// Prediction averages member probability vectors with equal weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<EnsembleMember>,
    pub class_order: Vec<String>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl EnsembleModel {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self, ModelError> {
        let first = members
            .first()
            .ok_or_else(|| ModelError::Shape("an ensemble needs at least one member".into()))?;
        let class_order = first.model.class_order().to_vec();
        if members.iter().any(|m| m.model.class_order() != class_order.as_slice()) {
            return Err(ModelError::Shape("ensemble members disagree on class order".into()));
        }
        Ok(Self { members, class_order })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Averaged probabilities for every row of `base` (the selected variants
    /// in alias order). Member vectors are summed in member order and the sum
    /// divided by the member count.
    pub fn predict_proba(&self, base: &LabeledMatrix) -> Result<Array2<f64>, ModelError> {
        let mut sum = Array2::<f64>::zeros((base.x.nrows(), self.class_order.len()));
        for m in &self.members {
            let augmented = transform_matrix(base, &m.feature_set)?;
            if augmented.x.ncols() != m.model.n_inputs() {
                return Err(ModelError::Shape(format!(
                    "member expects {} inputs, got {}",
                    m.model.n_inputs(),
                    augmented.x.ncols()
                )));
            }
            sum += &m.model.predict_proba(augmented.x.view());
        }
        let k = self.members.len() as f64;
        Ok(sum.mapv(|v| v / k))
    }

    /// Single-row prediction: averaged probabilities and the argmax class.
    pub fn predict_row(&self, x: &[f64]) -> Result<(Vec<f64>, usize), ModelError> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| ModelError::Shape(e.to_string()))?;
        let base = LabeledMatrix {
            columns: (1..=x.len()).map(|i| format!("x{i}")).collect(),
            x: view.to_owned(),
            y: vec![0],
            class_names: self.class_order.clone(),
        };
        let p = self.predict_proba(&base)?.row(0).to_vec();
        let c = argmax_lowest(&p);
        Ok((p, c))
    }
}

pub fn ensemble_predict(ens: &EnsembleModel, x: &[f64]) -> Result<(Vec<f64>, usize), ModelError> {
    ens.predict_row(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engineering::compile_expression;
    use crate::models::{train_logreg, LogisticModel, LogisticParams};
    use ndarray::array;

    fn fixed(probs_class1: f64) -> TrainedModel {
        // Zero weights and intercepts chosen to give the requested probability.
        let logit = (probs_class1 / (1.0 - probs_class1)).ln();
        TrainedModel::Logistic(LogisticModel {
            weights: array![[0.0, 0.0], [0.0, logit]],
            class_order: vec!["a".into(), "b".into()],
            l2_strength: 0.0,
            converged: true,
            iterations: 0,
        })
    }

    fn member(m: TrainedModel) -> EnsembleMember {
        EnsembleMember {
            feature_set: FeatureSet::default(),
            model: m,
        }
    }

    #[test]
    fn average_of_two_members() {
        let ens = EnsembleModel::new(vec![member(fixed(0.8)), member(fixed(0.4))]).unwrap();
        let (p, c) = ens.predict_row(&[1.0]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-12 && (p[1] - 0.6).abs() < 1e-12);
        assert_eq!(c, 1);
    }

    #[test]
    fn single_member_is_identity() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [1.0, 2.0]];
        let y = [0, 1, 1, 0];
        let classes = vec!["a".to_string(), "b".to_string()];
        let m = TrainedModel::Logistic(train_logreg(&x, &y, &classes, &LogisticParams::default()).unwrap());
        let ens = EnsembleModel::new(vec![member(m.clone())]).unwrap();
        let base = LabeledMatrix {
            columns: vec!["u".into(), "v".into()],
            x: x.clone(),
            y: y.to_vec(),
            class_names: classes,
        };
        assert_eq!(ens.predict_proba(&base).unwrap(), m.predict_proba(x.view()));
    }

    #[test]
    fn members_apply_their_own_features() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let x = array![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [2.0, 0.0]];
        let y = [0, 1, 0, 0, 1, 0];
        let fs = FeatureSet {
            expressions: vec![("p".into(), compile_expression("x1 * x2", 2).unwrap())],
            ..Default::default()
        };
        let base = LabeledMatrix {
            columns: vec!["u".into(), "v".into()],
            x: x.clone(),
            y: y.to_vec(),
            class_names: classes.clone(),
        };
        let aug = transform_matrix(&base, &fs).unwrap();
        let m = TrainedModel::Logistic(train_logreg(&aug.x, &y, &classes, &LogisticParams::default()).unwrap());
        let ens = EnsembleModel::new(vec![EnsembleMember {
            feature_set: fs,
            model: m,
        }])
        .unwrap();
        let p = ens.predict_proba(&base).unwrap();
        assert!(p[[1, 1]] > p[[2, 1]]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
    }
}
