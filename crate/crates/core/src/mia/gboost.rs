//! Gradient boosting on logistic loss with depth-limited regression trees.
//!
//! Split selection is fully deterministic: features are scanned in index
//! order and thresholds in ascending value order, and a split replaces the
//! incumbent only on strictly higher gain, so ties resolve to the lowest
//! feature index and lowest threshold. Leaf values are Newton steps
//! (sum residual / sum hessian). Unlike the other families, a single-class
//! label vector is accepted: the clamped prior alone models it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PRIOR_CLAMP: f64 = 1e-4;
const HESSIAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Tree {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Tree>,
        right: Box<Tree>,
    },
}

impl Tree {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Tree::Leaf { value } => *value,
            Tree::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoost {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    residuals: &'a [f64],
    hessians: &'a [f64],
}

impl TreeBuilder<'_> {
    fn leaf(&self, rows: &[u32]) -> Tree {
        let sum_r: f64 = rows.iter().map(|&i| self.residuals[i as usize]).sum();
        let sum_h: f64 = rows.iter().map(|&i| self.hessians[i as usize]).sum();
        Tree::Leaf { value: sum_r / sum_h.max(HESSIAN_FLOOR) }
    }

    /// `sorted_rows[f]` holds this node's row indices ordered by feature f.
    fn build(&self, sorted_rows: Vec<Vec<u32>>, depth_left: usize) -> Tree {
        let n = sorted_rows[0].len();
        if depth_left == 0 || n < 2 {
            return self.leaf(&sorted_rows[0]);
        }

        let total: f64 = sorted_rows[0].iter().map(|&i| self.residuals[i as usize]).sum();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for (feature, rows) in sorted_rows.iter().enumerate() {
            let mut left_sum = 0.0;
            for (pos, &i) in rows.iter().enumerate().take(n - 1) {
                left_sum += self.residuals[i as usize];
                let here = self.x[i as usize][feature];
                let next = self.x[rows[pos + 1] as usize][feature];
                if here == next {
                    continue;
                }
                let n_left = (pos + 1) as f64;
                let n_right = (n - pos - 1) as f64;
                let right_sum = total - left_sum;
                // Any valid threshold is a candidate, zero-gain ones
                // included; depth-2 trees can only separate interaction
                // patterns whose root split alone has no first-order gain
                // if such splits are taken.
                let gain =
                    left_sum * left_sum / n_left + right_sum * right_sum / n_right - base;
                if best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, feature, 0.5 * (here + next)));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.leaf(&sorted_rows[0]);
        };
        let n_features = sorted_rows.len();
        let mut left_rows = vec![Vec::new(); n_features];
        let mut right_rows = vec![Vec::new(); n_features];
        for (f, rows) in sorted_rows.into_iter().enumerate() {
            for i in rows {
                if self.x[i as usize][feature] <= threshold {
                    left_rows[f].push(i);
                } else {
                    right_rows[f].push(i);
                }
            }
        }
        Tree::Split {
            feature,
            threshold,
            left: Box::new(self.build(left_rows, depth_left - 1)),
            right: Box::new(self.build(right_rows, depth_left - 1)),
        }
    }
}

pub fn train_gboost(
    x: &[Vec<f64>],
    y: &[bool],
    n_trees: usize,
    depth: usize,
    lr: f64,
) -> Result<GradientBoost> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Fit(format!(
            "need matching non-empty features and labels, got {} rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].len();
    if x.iter().any(|row| row.len() != dim) {
        return Err(Error::Fit("feature rows have inconsistent dimensions".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Fit(format!("learning rate must be positive, got {lr}")));
    }

    let n = x.len();
    let base_rate = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let p0 = base_rate.clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let base_score = (p0 / (1.0 - p0)).ln();

    // Sort each feature's row order once; nodes filter it stably.
    let mut sorted_by_feature: Vec<Vec<u32>> = Vec::with_capacity(dim);
    for f in 0..dim {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.sort_by(|&a, &b| {
            x[a as usize][f].partial_cmp(&x[b as usize][f]).unwrap().then(a.cmp(&b))
        });
        sorted_by_feature.push(idx);
    }

    let mut scores = vec![base_score; n];
    let mut trees = Vec::with_capacity(n_trees);
    let mut residuals = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    for _ in 0..n_trees {
        for i in 0..n {
            let p = 1.0 / (1.0 + (-scores[i]).exp());
            residuals[i] = if y[i] { 1.0 - p } else { -p };
            hessians[i] = p * (1.0 - p);
        }
        let builder = TreeBuilder { x, residuals: &residuals, hessians: &hessians };
        let tree = builder.build(sorted_by_feature.clone(), depth);
        for (i, row) in x.iter().enumerate() {
            scores[i] += lr * tree.eval(row);
        }
        trees.push(tree);
    }
    Ok(GradientBoost { base_score, learning_rate: lr, trees })
}

impl GradientBoost {
    pub fn proba(&self, x: &[f64]) -> f64 {
        let score = self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.eval(x)).sum::<f64>();
        1.0 / (1.0 + (-score).exp())
    }
}
