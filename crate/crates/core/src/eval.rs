//! Scoring for ranked extraction predictions: recall at a false-positive
//! budget, precision, confusion tallies, and the rank-of-correct histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// One entry of a confidence-ordered prediction list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub sample_id: u32,
    pub correct: bool,
    pub confidence: f64,
}

/// What the false-positive budget is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetBase {
    /// All evaluated samples, whether or not a prediction was emitted.
    TotalSamples,
    /// Emitted predictions only.
    EmittedGuesses,
}

/// Walk the ranked list counting correct predictions until the error
/// budget `floor(fpr * n_total)` would be exceeded; the score divides by
/// `n_total`, so abstentions lower recall but never count as errors.
pub fn recall_at_fpr(ranked: &[RankedItem], n_total: usize, fpr: f64) -> Result<f64> {
    recall_at_fpr_with_base(ranked, n_total, fpr, BudgetBase::TotalSamples)
}

pub fn recall_at_fpr_with_base(
    ranked: &[RankedItem],
    n_total: usize,
    fpr: f64,
    base: BudgetBase,
) -> Result<f64> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::Argument(format!("fpr must be in (0, 1), got {fpr}")));
    }
    if n_total < ranked.len() {
        return Err(Error::Argument(format!(
            "n_total {n_total} smaller than ranked list of {}",
            ranked.len()
        )));
    }
    if n_total == 0 {
        return Ok(0.0);
    }
    let base_count = match base {
        BudgetBase::TotalSamples => n_total,
        BudgetBase::EmittedGuesses => ranked.len(),
    };
    let budget = (fpr * base_count as f64).floor() as usize;
    let mut correct = 0usize;
    let mut errors = 0usize;
    for item in ranked {
        if item.correct {
            correct += 1;
        } else {
            errors += 1;
            if errors > budget {
                break;
            }
        }
    }
    Ok(correct as f64 / n_total as f64)
}

/// Fraction of emitted predictions that are correct; 0 when none emitted.
pub fn ranked_precision(ranked: &[RankedItem]) -> f64 {
    if ranked.is_empty() {
        return 0.0;
    }
    let correct = ranked.iter().filter(|item| item.correct).count();
    correct as f64 / ranked.len() as f64
}

/// Fraction of all `n_total` samples recovered anywhere in the list.
pub fn ranked_recall(ranked: &[RankedItem], n_total: usize) -> f64 {
    if n_total == 0 {
        return 0.0;
    }
    let correct = ranked.iter().filter(|item| item.correct).count();
    correct as f64 / n_total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }
}

pub fn confusion(predictions: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(m)
}

/// 1-based rank of the true suffix within each prefix's loss-ordered
/// candidate list; prefixes whose list lacks the true suffix are omitted.
pub fn rank_histogram<'a, I>(per_prefix: I) -> BTreeMap<usize, usize>
where
    I: IntoIterator<Item = (&'a [Vec<TokenId>], &'a [TokenId])>,
{
    let mut hist = BTreeMap::new();
    for (candidates, truth) in per_prefix {
        if let Some(pos) = candidates.iter().position(|c| c.as_slice() == truth) {
            *hist.entry(pos + 1).or_insert(0) += 1;
        }
    }
    hist
}

/// Metric block of an attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall_at_fpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: ConfusionMatrix,
    pub stage1_recall: f64,
    pub stage1_recall_post_filter: f64,
}
