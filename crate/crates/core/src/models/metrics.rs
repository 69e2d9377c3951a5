use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AurocAverage {
    /// Unweighted mean of one-vs-rest AUROCs over classes present in the labels.
    #[default]
    Macro,
    /// One AUROC over all (sample, class) pairs, one-hot labels against scores.
    Micro,
}

/// Mann–Whitney AUROC with half credit for tied scores, via midranks.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Result<f64, ModelError> {
    if scores.len() != positive.len() {
        return Err(ModelError::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::DegenerateLabels(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ModelError::Shape("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positive rank sum keeps midranks integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        rank_sum2 += midrank2 * pos_in_group;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// AUROC of class-probability rows against integer labels. Two columns are
/// scored as a binary problem on the second column; more use `average`.
pub fn auroc(probs: &Array2<f64>, labels: &[usize], average: AurocAverage) -> Result<f64, ModelError> {
    if probs.nrows() != labels.len() {
        return Err(ModelError::Shape(format!(
            "{} rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let c = probs.ncols();
    if labels.iter().any(|&l| l >= c) {
        return Err(ModelError::Shape("label outside the probability columns".into()));
    }
    if c == 2 {
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return binary_auroc(&probs.column(1).to_vec(), &pos);
    }
    match average {
        AurocAverage::Macro => {
            let mut total = 0.0;
            let mut counted = 0;
            for k in 0..c {
                let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
                if !pos.iter().any(|&p| p) {
                    continue;
                }
                total += binary_auroc(&probs.column(k).to_vec(), &pos)?;
                counted += 1;
            }
            if counted < 2 {
                return Err(ModelError::DegenerateLabels("fewer than two classes present".into()));
            }
            Ok(total / counted as f64)
        }
        AurocAverage::Micro => {
            let scores: Vec<f64> = probs.iter().copied().collect();
            let pos: Vec<bool> = (0..probs.nrows())
                .flat_map(|i| (0..c).map(move |k| (i, k)))
                .map(|(i, k)| labels[i] == k)
                .collect();
            binary_auroc(&scores, &pos)
        }
    }
}
