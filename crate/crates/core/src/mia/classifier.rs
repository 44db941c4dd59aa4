//! Hand-rolled membership classifiers behind one serializable enum.
//!
//! Every fit is deterministic: zero or closed-form initialization, fixed
//! iteration order, no RNG. `predict` agrees with `predict_proba >= 0.5`
//! for every classifier that exposes probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mia::gboost::GradientBoost;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_dataset(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
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
    Ok(dim)
}

fn check_two_classes(y: &[bool]) -> Result<()> {
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Fit("training labels contain a single class".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// L2-regularized mean logistic loss and its analytic gradient, exposed so
/// the gradient can be checked against finite differences.
pub fn logreg_loss_and_grad(
    weights: &[f64],
    bias: f64,
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z = bias + weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
        let p = sigmoid(z);
        let target = if label { 1.0 } else { 0.0 };
        // Numerically stable -[y ln p + (1-y) ln(1-p)] via log1p of exp.
        loss += (1.0 + (-z.abs()).exp()).ln() + if label { (-z).max(0.0) } else { z.max(0.0) };
        let err = p - target;
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g += err * v;
        }
        grad_b += err;
    }
    loss /= n;
    grad_b /= n;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
        loss += 0.5 * l2 * w * w;
    }
    (loss, grad_w, grad_b)
}

pub fn train_logreg(
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
    lr: f64,
    epochs: usize,
) -> Result<LogReg> {
    let dim = check_dataset(x, y)?;
    check_two_classes(y)?;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..epochs {
        let (_, grad_w, grad_b) = logreg_loss_and_grad(&weights, bias, x, y, l2);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= lr * g;
        }
        bias -= lr * grad_b;
    }
    Ok(LogReg { weights, bias })
}

impl LogReg {
    pub fn proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Log priors, means, and floored population variances per class,
    /// index 0 = non-member, 1 = member.
    pub log_prior: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub vars: [Vec<f64>; 2],
}

const VAR_FLOOR: f64 = 1e-9;

pub fn train_gnb(x: &[Vec<f64>], y: &[bool]) -> Result<GaussianNb> {
    let dim = check_dataset(x, y)?;
    check_two_classes(y)?;
    let mut counts = [0usize; 2];
    let mut means = [vec![0.0; dim], vec![0.0; dim]];
    for (row, &label) in x.iter().zip(y) {
        let c = label as usize;
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    for c in 0..2 {
        for m in means[c].iter_mut() {
            *m /= counts[c] as f64;
        }
    }
    let mut vars = [vec![0.0; dim], vec![0.0; dim]];
    for (row, &label) in x.iter().zip(y) {
        let c = label as usize;
        for ((s, v), m) in vars[c].iter_mut().zip(row).zip(&means[c]) {
            *s += (v - m) * (v - m);
        }
    }
    for c in 0..2 {
        for s in vars[c].iter_mut() {
            *s = (*s / counts[c] as f64).max(VAR_FLOOR);
        }
    }
    let n = x.len() as f64;
    let log_prior = [(counts[0] as f64 / n).ln(), (counts[1] as f64 / n).ln()];
    Ok(GaussianNb { log_prior, means, vars })
}

impl GaussianNb {
    fn log_likelihood(&self, class: usize, x: &[f64]) -> f64 {
        let mut ll = self.log_prior[class];
        for ((v, m), s2) in x.iter().zip(&self.means[class]).zip(&self.vars[class]) {
            ll += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (v - m) * (v - m) / (2.0 * s2);
        }
        ll
    }

    pub fn proba(&self, x: &[f64]) -> f64 {
        let ll0 = self.log_likelihood(0, x);
        let ll1 = self.log_likelihood(1, x);
        sigmoid(ll1 - ll0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perceptron {
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn train_perceptron(
    x: &[Vec<f64>],
    y: &[bool],
    epochs: usize,
    lr: f64,
) -> Result<Perceptron> {
    let dim = check_dataset(x, y)?;
    check_two_classes(y)?;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..epochs {
        for (row, &label) in x.iter().zip(y) {
            let score =
                bias + weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
            let predicted = score > 0.0;
            if predicted != label {
                let step = if label { lr } else { -lr };
                for (w, v) in weights.iter_mut().zip(row) {
                    *w += step * v;
                }
                bias += step;
            }
        }
    }
    Ok(Perceptron { weights, bias })
}

impl Perceptron {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// A fitted classifier of any supported family. Round-trips through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedClassifier {
    Logreg(LogReg),
    Gnb(GaussianNb),
    Gboost(GradientBoost),
    Perceptron(Perceptron),
}

impl TrainedClassifier {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Logreg(_) => "logreg",
            Self::Gnb(_) => "gnb",
            Self::Gboost(_) => "gboost",
            Self::Perceptron(_) => "perceptron",
        }
    }

    /// Probability of membership, when this family provides one.
    pub fn predict_proba(&self, x: &[f64]) -> Option<f64> {
        match self {
            Self::Logreg(m) => Some(m.proba(x)),
            Self::Gnb(m) => Some(m.proba(x)),
            Self::Gboost(m) => Some(m.proba(x)),
            Self::Perceptron(_) => None,
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        match self {
            Self::Perceptron(m) => m.score(x) > 0.0,
            other => other.predict_proba(x).unwrap() >= 0.5,
        }
    }
}
