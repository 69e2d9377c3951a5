//! Data-driven feature selection: LASSO, first principal component, and
//! random-forest Gini importance.
//!
//! Each method scores every column, then keeps the `d'` best. Columns are
//! processed in name order internally, so the result does not depend on the
//! column order of the input.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{stratified_folds, DatasetError, LabeledMatrix};
use crate::models::{auroc, train_forest, AurocAverage, ForestParams, ModelError};
use crate::selection::SelectionReport;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training labels contain a single class")]
    SingleClassTrainingSet,
    #[error("every column has zero variance")]
    ZeroVarianceMatrix,
    #[error("asked for {d_prime} features but only {available} columns exist")]
    TooFewColumns { d_prime: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Lasso,
    Pca,
    Gini,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Lasso => "lasso",
            BaselineMethod::Pca => "pca",
            BaselineMethod::Gini => "gini",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSelection {
    pub method: BaselineMethod,
    /// `d'` names, best first.
    pub selected: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl From<&BaselineSelection> for SelectionReport {
    fn from(b: &BaselineSelection) -> Self {
        SelectionReport {
            method: b.method.name().to_string(),
            selected: b.selected.clone(),
            scores: b.scores.clone(),
            rounds: Vec::new(),
            notes: b.notes.clone(),
        }
    }
}

/// Column permutation that sorts names; `perm[i]` is the source column of
/// canonical column `i`.
fn canonical(m: &LabeledMatrix) -> (Vec<usize>, Array2<f64>) {
    let mut perm: Vec<usize> = (0..m.columns.len()).collect();
    perm.sort_by(|&a, &b| m.columns[a].cmp(&m.columns[b]));
    (perm.clone(), m.x.select(Axis(1), &perm))
}

/// Top `d'` canonical columns by `primary`, then `secondary`, then name.
fn rank(m: &LabeledMatrix, perm: &[usize], primary: &[f64], secondary: &[f64], d_prime: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..perm.len()).collect();
    idx.sort_by(|&a, &b| {
        primary[b]
            .total_cmp(&primary[a])
            .then_with(|| secondary[b].total_cmp(&secondary[a]))
            .then_with(|| a.cmp(&b))
    });
    idx.into_iter()
        .take(d_prime)
        .map(|i| m.columns[perm[i]].clone())
        .collect()
}

fn check(m: &LabeledMatrix, d_prime: usize) -> Result<(), BaselineError> {
    if d_prime > m.columns.len() || d_prime == 0 {
        return Err(BaselineError::TooFewColumns {
            d_prime,
            available: m.columns.len(),
        });
    }
    let first = m.y.first().copied();
    if m.y.iter().all(|&c| Some(c) == first) {
        return Err(BaselineError::SingleClassTrainingSet);
    }
    Ok(())
}

/// Largest absolute correlation between each column and any one-vs-rest
/// class indicator.
fn label_correlations(x: &Array2<f64>, y: &[usize], n_classes: usize) -> Vec<f64> {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("rows");
    let sd = x.std_axis(Axis(0), 0.0);
    (0..x.ncols())
        .map(|j| {
            if sd[j] <= 1e-12 {
                return 0.0;
            }
            (0..n_classes)
                .map(|c| {
                    let ind: Vec<f64> = y.iter().map(|&l| (l == c) as u8 as f64).collect();
                    let im = ind.iter().sum::<f64>() / n;
                    let isd = (ind.iter().map(|v| (v - im) * (v - im)).sum::<f64>() / n).sqrt();
                    if isd <= 1e-12 {
                        return 0.0;
                    }
                    let cov = x
                        .column(j)
                        .iter()
                        .zip(&ind)
                        .map(|(a, b)| (a - mean[j]) * (b - im))
                        .sum::<f64>()
                        / n;
                    (cov / (sd[j] * isd)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// LASSO
// ---------------------------------------------------------------------------

/// Soft-thresholding operator, the proximal map of `t·|w|`.
pub fn soft_threshold(w: f64, t: f64) -> f64 {
    if w > t {
        w - t
    } else if w < -t {
        w + t
    } else {
        0.0
    }
}

pub const LASSO_PATH_LEN: usize = 30;
pub const LASSO_PATH_RATIO: f64 = 1e-3;
const LASSO_TOL: f64 = 1e-4;
const LASSO_MAX_SWEEPS: usize = 100;
const LASSO_DEV_SATURATION: f64 = 0.99;

/// Coordinate-descent state for multinomial L1-logistic regression on a
/// standardized design. Each coordinate step minimizes the quadratic upper
/// bound given by a fixed curvature bound, so the objective never increases.
///
/// Probabilities are kept as unnormalized exponentials `u` with row sums, so
/// moving one coefficient costs a single `exp` per row.
struct Lasso {
    n: usize,
    classes: usize,
    /// Column-major copy of X: column `j` is `xt[j*n..(j+1)*n]`.
    xt: Vec<f64>,
    /// Row-major one-hot targets.
    oh: Vec<f64>,
    /// `C × (d + 1)`, intercept last.
    w: Array2<f64>,
    logits: Vec<f64>,
    u: Vec<f64>,
    sums: Vec<f64>,
    /// Curvature bound per column: `mean(x_j²) / 4`.
    curv: Vec<f64>,
}

impl Lasso {
    fn new(x: &Array2<f64>, oh: &Array2<f64>, w: Array2<f64>) -> Self {
        let (n, d) = x.dim();
        let classes = oh.ncols();
        let xt: Vec<f64> = x.t().iter().copied().collect();
        let curv = xt
            .chunks(n.max(1))
            .map(|c| 0.25 * c.iter().map(|v| v * v).sum::<f64>() / n as f64)
            .collect();
        let mut logits = x.dot(&w.slice(s![.., ..d]).t());
        logits += &w.column(d);
        let mut me = Self {
            n,
            classes,
            xt,
            oh: oh.iter().copied().collect(),
            w,
            logits: logits.iter().copied().collect(),
            u: vec![0.0; n * classes],
            sums: vec![0.0; n],
            curv,
        };
        me.renormalize();
        me
    }

    fn renormalize(&mut self) {
        let c = self.classes;
        for i in 0..self.n {
            let z = &self.logits[i * c..(i + 1) * c];
            let max = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for k in 0..c {
                let e = (z[k] - max).exp();
                self.u[i * c + k] = e;
                sum += e;
            }
            self.sums[i] = sum;
        }
    }

    fn mean_loss(&self) -> f64 {
        let c = self.classes;
        let mut total = 0.0;
        for i in 0..self.n {
            for k in 0..c {
                if self.oh[i * c + k] > 0.0 {
                    total -= (self.u[i * c + k] / self.sums[i]).max(f64::MIN_POSITIVE).ln();
                }
            }
        }
        total / self.n as f64
    }

    fn gradient(&self, k: usize, col: Option<usize>) -> f64 {
        let c = self.classes;
        let mut g = 0.0;
        for i in 0..self.n {
            let r = self.u[i * c + k] / self.sums[i] - self.oh[i * c + k];
            g += match col {
                Some(j) => r * self.xt[j * self.n + i],
                None => r,
            };
        }
        g / self.n as f64
    }

    fn shift(&mut self, k: usize, delta: f64, col: Option<usize>) {
        let c = self.classes;
        match col {
            Some(j) => {
                for i in 0..self.n {
                    let step = delta * self.xt[j * self.n + i];
                    let idx = i * c + k;
                    self.logits[idx] += step;
                    let old = self.u[idx];
                    let new = old * step.exp();
                    self.u[idx] = new;
                    self.sums[i] += new - old;
                }
            }
            None => {
                let e = delta.exp();
                for i in 0..self.n {
                    let idx = i * c + k;
                    self.logits[idx] += delta;
                    let old = self.u[idx];
                    self.u[idx] = old * e;
                    self.sums[i] += old * (e - 1.0);
                }
            }
        }
    }

    /// One pass over the given columns (all classes) and the intercepts;
    /// returns the largest coefficient change.
    fn sweep(&mut self, lambda: f64, cols: &[usize]) -> f64 {
        let d = self.w.ncols() - 1;
        let mut max_delta: f64 = 0.0;
        for &j in cols {
            let l = self.curv[j];
            if l <= 0.0 {
                continue;
            }
            for k in 0..self.classes {
                let g = self.gradient(k, Some(j));
                let old = self.w[[k, j]];
                let new = soft_threshold(old - g / l, lambda / l);
                let delta = new - old;
                if delta != 0.0 {
                    self.w[[k, j]] = new;
                    self.shift(k, delta, Some(j));
                    max_delta = max_delta.max(delta.abs());
                }
            }
        }
        for k in 0..self.classes {
            let delta = -self.gradient(k, None) / 0.25;
            if delta != 0.0 {
                self.w[[k, d]] += delta;
                self.shift(k, delta, None);
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    /// Minimizes at `lambda`, alternating full sweeps with sweeps restricted
    /// to the current non-zero columns, within a fixed sweep budget.
    fn solve(&mut self, lambda: f64) {
        let d = self.w.ncols() - 1;
        let all: Vec<usize> = (0..d).collect();
        let mut budget = LASSO_MAX_SWEEPS;
        while budget > 0 {
            budget -= 1;
            self.renormalize();
            if self.sweep(lambda, &all) < LASSO_TOL {
                return;
            }
            let active: Vec<usize> = (0..d).filter(|&j| self.w.column(j).iter().any(|v| *v != 0.0)).collect();
            while budget > 0 {
                budget -= 1;
                if self.sweep(lambda, &active) < LASSO_TOL {
                    break;
                }
            }
        }
    }
}

fn standardizer(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("rows");
    let mut sd = x.std_axis(Axis(0), 0.0);
    sd.mapv_inplace(|v| if v > 1e-12 { v } else { 1.0 });
    (mean, sd)
}

fn standardize(x: &Array2<f64>) -> Array2<f64> {
    let (mean, sd) = standardizer(x);
    (x - &mean) / &sd
}

fn onehot(y: &[usize], c: usize) -> Array2<f64> {
    Array2::from_shape_fn((y.len(), c), |(i, k)| (y[i] == k) as u8 as f64)
}

fn lambda_max(x: &Array2<f64>, oh: &Array2<f64>) -> f64 {
    let prior = oh.mean_axis(Axis(0)).expect("rows");
    let resid = oh - &prior;
    let g = resid.t().dot(x) / x.nrows() as f64;
    g.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-12)
}

fn initial_weights(oh: &Array2<f64>, m: usize) -> Array2<f64> {
    let prior = oh.mean_axis(Axis(0)).expect("rows");
    let mut w = Array2::zeros((oh.ncols(), m + 1));
    for (c, p) in prior.iter().enumerate() {
        w[[c, m]] = p.max(1e-6).ln();
    }
    w
}

/// Fits the whole path with warm starts and returns one weight matrix per λ.
/// Once the training deviance is nearly saturated the remaining path points
/// repeat the last solution, since further shrinkage of λ only inflates the
/// weights of an already separating fit.
fn lasso_path(x: &Array2<f64>, oh: &Array2<f64>, lambdas: &[f64]) -> Vec<Array2<f64>> {
    let mut solver = Lasso::new(x, oh, initial_weights(oh, x.ncols()));
    let null = solver.mean_loss();
    let mut prev = null;
    let mut out: Vec<Array2<f64>> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        if let Some(last) = out.last() {
            if prev <= null * (1.0 - LASSO_DEV_SATURATION) {
                out.push(last.clone());
                continue;
            }
        }
        solver.solve(l);
        solver.renormalize();
        prev = solver.mean_loss();
        out.push(solver.w.clone());
    }
    out
}

fn predict(w: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let m = x.ncols();
    let mut z = x.dot(&w.slice(s![.., ..m]).t());
    z += &w.column(m);
    for mut row in z.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    z
}

/// Geometric λ path from `λ_max` (all weights zero) down to `λ_max·1e-3`.
pub fn lambda_path(lmax: f64) -> Vec<f64> {
    (0..LASSO_PATH_LEN)
        .map(|t| lmax * LASSO_PATH_RATIO.powf(t as f64 / (LASSO_PATH_LEN - 1) as f64))
        .collect()
}

/// Multinomial L1-logistic selection. λ is chosen by stratified CV AUROC
/// (ties toward larger λ); columns are ranked by their largest absolute
/// standardized coefficient, then by absolute label correlation.
pub fn lasso_select(m: &LabeledMatrix, d_prime: usize, seed: u64) -> Result<BaselineSelection, BaselineError> {
    check(m, d_prime)?;
    let (perm, x_raw) = canonical(m);
    let x = standardize(&x_raw);
    let c = m.n_classes();
    let oh = onehot(&m.y, c);
    let lambdas = lambda_path(lambda_max(&x, &oh));
    let mut notes = Vec::new();

    let chosen = match stratified_folds(&m.y, 4, seed) {
        Ok(folds) => {
            if let Some(w) = &folds.warning {
                notes.push(w.clone());
            }
            let mut totals = vec![0.0; lambdas.len()];
            let mut used = 0;
            for f in &folds.folds {
                // Validation rows are scaled with the training fold statistics.
                let tr = x_raw.select(Axis(0), &f.train);
                let (mean, sd) = standardizer(&tr);
                let xt = (&tr - &mean) / &sd;
                let yt: Vec<usize> = f.train.iter().map(|&i| m.y[i]).collect();
                let xv = (&x_raw.select(Axis(0), &f.validation) - &mean) / &sd;
                let yv: Vec<usize> = f.validation.iter().map(|&i| m.y[i]).collect();
                let path = lasso_path(&xt, &onehot(&yt, c), &lambdas);
                let scores: Result<Vec<f64>, ModelError> = path
                    .iter()
                    .map(|w| auroc(&predict(w, &xv), &yv, AurocAverage::Macro))
                    .collect();
                match scores {
                    Ok(s) => {
                        totals.iter_mut().zip(s).for_each(|(t, v)| *t += v);
                        used += 1;
                    }
                    Err(ModelError::DegenerateLabels(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if used == 0 {
                notes.push("cross-validation impossible; used the smallest lambda".into());
                lambdas.len() - 1
            } else {
                // First maximum in path order is the largest λ among ties.
                let mut best = 0;
                for i in 1..totals.len() {
                    if totals[i] > totals[best] {
                        best = i;
                    }
                }
                best
            }
        }
        Err(DatasetError::DegenerateSplit(msg)) => {
            notes.push(format!("cross-validation impossible ({msg}); used the smallest lambda"));
            lambdas.len() - 1
        }
        Err(e) => return Err(e.into()),
    };

    let path = lasso_path(&x, &oh, &lambdas[..=chosen]);
    let w = path.last().expect("non-empty path");
    let d = x.ncols();
    let coef: Vec<f64> = (0..d)
        .map(|j| (0..c).map(|k| w[[k, j]].abs()).fold(0.0, f64::max))
        .collect();
    let corr = label_correlations(&x_raw, &m.y, c);
    if coef.iter().all(|&v| v == 0.0) {
        notes.push("all LASSO coefficients are zero; ranked by absolute label correlation".into());
    }
    notes.push(format!("lambda = {:.6e} (path index {chosen})", lambdas[chosen]));
    let selected = rank(m, &perm, &coef, &corr, d_prime);
    let scores = perm
        .iter()
        .enumerate()
        .map(|(i, &src)| (m.columns[src].clone(), coef[i]))
        .collect();
    Ok(BaselineSelection {
        method: BaselineMethod::Lasso,
        selected,
        scores,
        notes,
    })
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

pub const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 100_000;

/// Leading eigenvector of `XᵀX` for centered `x`, by power iteration. The
/// sign is fixed so the largest-magnitude entry is positive.
pub fn first_component(x_centered: &Array2<f64>) -> Result<Array1<f64>, BaselineError> {
    let d = x_centered.ncols();
    let col_norm: Array1<f64> = x_centered.map_axis(Axis(0), |c| c.dot(&c));
    if col_norm.iter().all(|&v| v <= 1e-24) {
        return Err(BaselineError::ZeroVarianceMatrix);
    }
    // Start from the column energies plus a small deterministic spread so the
    // start is never orthogonal to the leading component.
    let mut v: Array1<f64> = Array1::from_shape_fn(d, |j| col_norm[j] + 1e-3 * (1.0 + j as f64 / d as f64));
    v /= v.dot(&v).sqrt();
    for _ in 0..POWER_MAX_ITER {
        let mut next = x_centered.t().dot(&x_centered.dot(&v));
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return Err(BaselineError::ZeroVarianceMatrix);
        }
        next /= norm;
        let delta = (&next - &v).dot(&(&next - &v)).sqrt();
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    let lead = v
        .iter()
        .cloned()
        .fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
    if lead < 0.0 {
        v.mapv_inplace(|a| -a);
    }
    Ok(v)
}

/// Ranks columns by absolute loading on the first principal component of the
/// centered, unscaled matrix.
pub fn pca_select(m: &LabeledMatrix, d_prime: usize) -> Result<BaselineSelection, BaselineError> {
    if d_prime > m.columns.len() || d_prime == 0 {
        return Err(BaselineError::TooFewColumns {
            d_prime,
            available: m.columns.len(),
        });
    }
    let (perm, x) = canonical(m);
    let mean = x.mean_axis(Axis(0)).ok_or(BaselineError::ZeroVarianceMatrix)?;
    let centered = &x - &mean;
    let v = first_component(&centered)?;
    let loading: Vec<f64> = v.iter().map(|a| a.abs()).collect();
    let zeros = vec![0.0; loading.len()];
    Ok(BaselineSelection {
        method: BaselineMethod::Pca,
        selected: rank(m, &perm, &loading, &zeros, d_prime),
        scores: perm
            .iter()
            .enumerate()
            .map(|(i, &src)| (m.columns[src].clone(), loading[i]))
            .collect(),
        notes: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Gini importance
// ---------------------------------------------------------------------------

/// Ranks columns by normalized impurity decrease in a 100-tree forest.
pub fn gini_select(m: &LabeledMatrix, d_prime: usize, seed: u64) -> Result<BaselineSelection, BaselineError> {
    check(m, d_prime)?;
    let (perm, x) = canonical(m);
    let forest = train_forest(
        &x,
        &m.y,
        &m.class_names,
        &ForestParams {
            seed,
            ..Default::default()
        },
    )?;
    let imp = forest.importances;
    let corr = label_correlations(&x, &m.y, m.n_classes());
    let mut notes = Vec::new();
    if imp.iter().all(|&v| v == 0.0) {
        notes.push("no tree split; ranked by absolute label correlation".into());
    }
    Ok(BaselineSelection {
        method: BaselineMethod::Gini,
        selected: rank(m, &perm, &imp, &corr, d_prime),
        scores: perm
            .iter()
            .enumerate()
            .map(|(i, &src)| (m.columns[src].clone(), imp[i]))
            .collect(),
        notes,
    })
}
