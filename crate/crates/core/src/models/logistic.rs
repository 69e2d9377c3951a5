use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Multinomial logistic regression. `weights` is `C × (m + 1)` over the raw
/// input columns, intercept last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Array2<f64>,
    pub class_order: Vec<String>,
    pub l2_strength: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-5,
        }
    }
}

/// Row-wise softmax of `logits`, in place.
pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn logits(w: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let m = x.ncols();
    let mut z = x.dot(&w.slice(s![.., ..m]).t());
    z += &w.column(m);
    z
}

/// Mean cross-entropy plus `(l2 / 2)·‖W‖²` (intercepts unpenalized), and its
/// gradient with respect to `w`.
pub fn logistic_loss_and_grad(w: &Array2<f64>, x: &Array2<f64>, y: &[usize], l2: f64) -> (f64, Array2<f64>) {
    let n = x.nrows() as f64;
    let m = x.ncols();
    let mut p = logits(w, x.view());
    // log-sum-exp per row for a stable loss
    let mut loss = 0.0;
    for (i, row) in p.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y[i]];
    }
    loss /= n;
    let penalty = w.slice(s![.., ..m]).iter().map(|v| v * v).sum::<f64>();
    loss += 0.5 * l2 * penalty;

    softmax_rows(&mut p);
    for (i, &c) in y.iter().enumerate() {
        p[[i, c]] -= 1.0;
    }
    let mut grad = Array2::zeros(w.raw_dim());
    grad.slice_mut(s![.., ..m]).assign(&(p.t().dot(x) / n));
    grad.column_mut(m).assign(&(p.sum_axis(Axis(0)) / n));
    let mut wpart = grad.slice_mut(s![.., ..m]);
    wpart.scaled_add(l2, &w.slice(s![.., ..m]));
    (loss, grad)
}

fn loss_only(w: &Array2<f64>, x: &Array2<f64>, y: &[usize], l2: f64) -> f64 {
    let m = x.ncols();
    let z = logits(w, x.view());
    let mut loss = 0.0;
    for (i, row) in z.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        loss += max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[y[i]];
    }
    loss / x.nrows() as f64 + 0.5 * l2 * w.slice(s![.., ..m]).iter().map(|v| v * v).sum::<f64>()
}

/// Column means and standard deviations (1 for constant columns).
pub(crate) fn standardizer(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let mut scale = x.std_axis(Axis(0), 0.0);
    scale.mapv_inplace(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, scale)
}

pub(crate) fn check_labels(y: &[usize], n_classes: usize) -> Result<(), ModelError> {
    if y.iter().any(|&c| c >= n_classes) {
        return Err(ModelError::Shape("label index outside the class list".into()));
    }
    let first = y.first().copied();
    if y.iter().all(|&c| Some(c) == first) {
        return Err(ModelError::SingleClassTrainingSet);
    }
    Ok(())
}

/// Trace of objective values, one per accepted step, for tests.
pub(crate) struct Trace(pub Vec<f64>);

/// Proximal gradient descent: a gradient step on the cross-entropy, then the
/// exact proximal map of the quadratic penalty (a shrink of the non-intercept
/// weights). Step sizes backtrack until the quadratic upper bound holds,
/// which makes the full objective non-increasing.
pub(crate) fn descend(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    params: &LogisticParams,
    mut trace: Option<&mut Trace>,
) -> (Array2<f64>, bool, usize) {
    let m = x.ncols();
    let penalty = |w: &Array2<f64>| 0.5 * params.l2 * w.slice(s![.., ..m]).iter().map(|v| v * v).sum::<f64>();
    let mut w = Array2::zeros((n_classes, m + 1));
    let mut step = 1.0;
    let (mut ce, mut grad) = logistic_loss_and_grad(&w, x, y, 0.0);
    if let Some(t) = trace.as_deref_mut() {
        t.0.push(ce + penalty(&w));
    }
    for iter in 0..params.max_iter {
        let mut full = grad.clone();
        full.slice_mut(s![.., ..m]).scaled_add(params.l2, &w.slice(s![.., ..m]));
        if full.iter().map(|g| g * g).sum::<f64>().sqrt() < params.tol {
            return (w, true, iter);
        }
        let mut accepted = false;
        while step > 1e-14 {
            let mut z = &w - &(&grad * step);
            let shrink = 1.0 / (1.0 + step * params.l2);
            z.slice_mut(s![.., ..m]).mapv_inplace(|v| v * shrink);
            let diff = &z - &w;
            let bound = ce + (&grad * &diff).sum() + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            let cand = loss_only(&z, x, y, 0.0);
            if cand <= bound + 1e-12 * bound.abs() {
                if diff.iter().all(|d| *d == 0.0) {
                    return (w, false, iter);
                }
                w = z;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (w, false, iter);
        }
        (ce, grad) = logistic_loss_and_grad(&w, x, y, 0.0);
        if let Some(t) = trace.as_deref_mut() {
            t.0.push(ce + penalty(&w));
        }
        step = (step * 2.0).min(1e4);
    }
    let mut full = grad;
    full.slice_mut(s![.., ..m]).scaled_add(params.l2, &w.slice(s![.., ..m]));
    let converged = full.iter().map(|g| g * g).sum::<f64>().sqrt() < params.tol;
    (w, converged, params.max_iter)
}

/// Fits by backtracking proximal gradient descent on standardized columns,
/// then maps the weights back to the raw column scale. The penalty therefore
/// applies to standardized coefficients.
pub fn train_logreg(
    x: &Array2<f64>,
    y: &[usize],
    class_order: &[String],
    params: &LogisticParams,
) -> Result<LogisticModel, ModelError> {
    if x.nrows() != y.len() {
        return Err(ModelError::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    check_labels(y, class_order.len())?;
    if !(params.l2 >= 0.0) {
        return Err(ModelError::Shape("l2 must be non-negative".into()));
    }
    let (mean, scale) = standardizer(x);
    let z = (x - &mean) / &scale;
    let (w_std, converged, iterations) = descend(&z, y, class_order.len(), params, None);
    let m = x.ncols();
    let mut weights = Array2::zeros(w_std.raw_dim());
    for c in 0..class_order.len() {
        let mut shift = 0.0;
        for j in 0..m {
            let wj = w_std[[c, j]] / scale[j];
            weights[[c, j]] = wj;
            shift += wj * mean[j];
        }
        weights[[c, m]] = w_std[[c, m]] - shift;
    }
    if !converged {
        log::debug!("logistic regression stopped after {iterations} iterations without converging");
    }
    Ok(LogisticModel {
        weights,
        class_order: class_order.to_vec(),
        l2_strength: params.l2,
        converged,
        iterations,
    })
}

impl LogisticModel {
    pub fn n_inputs(&self) -> usize {
        self.weights.ncols() - 1
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut p = logits(&self.weights, x);
        softmax_rows(&mut p);
        p
    }
}
