//! Random forest of CART trees grown on bootstrap samples with Gini splits.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::check_labels;
use super::ModelError;
use crate::seeding::rng_for;

/// Gini impurity of a class-count vector.
pub fn gini(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

/// Size-weighted mean impurity of the children of a split.
pub fn weighted_gini(children: &[&[f64]]) -> f64 {
    let sizes: Vec<f64> = children.iter().map(|c| c.iter().sum()).collect();
    let total: f64 = sizes.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    children.iter().zip(&sizes).map(|(c, n)| n / total * gini(c)).sum()
}

/// A threshold strictly between `a < b` that keeps `a` on the left.
fn midpoint(a: f64, b: f64) -> f64 {
    let t = 0.5 * (a + b);
    if t < b {
        t
    } else {
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        counts: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A tree stored as a node array; node 0 is the root and `x[feature] <=
/// threshold` goes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_counts(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub class_order: Vec<String>,
    pub n_inputs: usize,
    /// Mean impurity decrease per input column, normalized to sum to 1
    /// (all zeros when no tree split).
    pub importances: Vec<f64>,
}

struct Grower<'a, R: Rng> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    max_features: usize,
    params: &'a ForestParams,
    rng: R,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
    n_left: usize,
}

impl<R: Rng> Grower<'_, R> {
    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_classes];
        for &r in rows {
            c[self.y[r]] += 1.0;
        }
        c
    }

    fn best_split(&mut self, rows: &[usize], parent: &[f64]) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let parent_impurity = gini(parent);
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in features {
            if visited >= self.max_features {
                break;
            }
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[[r, f]], self.y[r])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            visited += 1;
            let mut left = vec![0.0; self.n_classes];
            let mut right = parent.to_vec();
            for i in 0..pairs.len() - 1 {
                let c = pairs[i].1;
                left[c] += 1.0;
                right[c] -= 1.0;
                if pairs[i].0 == pairs[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let child = (nl * gini(&left) + (n - nl) * gini(&right)) / n;
                let decrease = parent_impurity - child;
                if best.as_ref().is_none_or(|b| decrease > b.decrease + 1e-15) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: midpoint(pairs[i].0, pairs[i + 1].0),
                        decrease,
                        n_left: i + 1,
                    });
                }
            }
        }
        best.filter(|b| b.decrease > 1e-12)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || rows.len() < self.params.min_samples_split.max(2) {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        self.importance[split.feature] += split.decrease * rows.len() as f64;
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[[r, split.feature]] <= split.threshold);
        debug_assert_eq!(left_rows.len(), split.n_left);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Trains `params.n_trees` trees; tree `t` draws its bootstrap sample and
/// feature subsets from `(params.seed, t)`, so the forest is identical for a
/// given seed regardless of thread count.
pub fn train_forest(
    x: &Array2<f64>,
    y: &[usize],
    class_order: &[String],
    params: &ForestParams,
) -> Result<ForestModel, ModelError> {
    if x.nrows() != y.len() {
        return Err(ModelError::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if params.n_trees == 0 {
        return Err(ModelError::Shape("a forest needs at least one tree".into()));
    }
    check_labels(y, class_order.len())?;
    let n = x.nrows();
    let m = x.ncols();
    let max_features = ((m as f64).sqrt().floor() as usize).max(1);
    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(params.seed, &[0x7EE, t as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut g = Grower {
                x: x.view(),
                y,
                n_classes: class_order.len(),
                max_features,
                params,
                rng,
                nodes: Vec::new(),
                importance: vec![0.0; m],
            };
            g.grow(rows, 0);
            let total: f64 = g.importance.iter().sum();
            if total > 0.0 {
                g.importance.iter_mut().for_each(|v| *v /= total);
            }
            (Tree { nodes: g.nodes }, g.importance)
        })
        .collect();
    let mut importances = vec![0.0; m];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        importances.iter_mut().zip(&imp).for_each(|(a, b)| *a += b);
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel {
        trees,
        class_order: class_order.to_vec(),
        n_inputs: m,
        importances,
    })
}

impl ForestModel {
    /// Tree-averaged leaf class frequencies.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let c = self.class_order.len();
        let mut out = Array2::zeros((x.nrows(), c));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            for tree in &self.trees {
                let counts = tree.leaf_counts(row);
                let total: f64 = counts.iter().sum();
                for k in 0..c {
                    out[[i, k]] += counts[k] / total;
                }
            }
            let k = self.trees.len() as f64;
            out.row_mut(i).mapv_inplace(|v| v / k);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn toy_weighted_gini() {
        assert!((weighted_gini(&[&[3.0, 1.0], &[0.0, 4.0]]) - 0.1875).abs() < 1e-12);
        assert_eq!(gini(&[5.0, 0.0]), 0.0);
        assert!((gini(&[1.0, 1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_feature_split_is_a_stump() {
        let x = array![[0.0], [0.0], [0.0], [2.0], [2.0], [2.0]];
        let y = [0, 0, 0, 1, 1, 1];
        let f = train_forest(
            &x,
            &y,
            &two(),
            &ForestParams {
                n_trees: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 1));
        let p = f.predict_proba(x.view());
        for (i, &c) in y.iter().enumerate() {
            assert!(p[[i, c]] > 0.5);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let x = Array2::from_shape_fn((40, 6), |(i, j)| ((i * 7 + j * 3) % 3) as f64);
        let y: Vec<usize> = (0..40).map(|i| (i % 3 == 0) as usize).collect();
        let p = ForestParams {
            n_trees: 20,
            seed: 3,
            ..Default::default()
        };
        let a = train_forest(&x, &y, &two(), &p).unwrap();
        let b = train_forest(&x, &y, &two(), &p).unwrap();
        assert_eq!(a, b);
        let probs = a.predict_proba(x.view());
        for row in probs.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert!((a.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depth_limit_respected() {
        let x = Array2::from_shape_fn((60, 4), |(i, j)| ((i * (j + 2)) % 5) as f64);
        let y: Vec<usize> = (0..60).map(|i| (i * 7 % 3 == 0) as usize).collect();
        let f = train_forest(
            &x,
            &y,
            &two(),
            &ForestParams {
                n_trees: 5,
                max_depth: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 3));
    }
}
