//! Stage-2 membership inference: feature construction from candidates,
//! classifier training and selection, and confidence-ordered predictions.

pub mod classifier;
pub mod gboost;
pub mod tfidf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::seeds;

pub use classifier::{
    logreg_loss_and_grad, train_gnb, train_logreg, train_perceptron, GaussianNb, LogReg,
    Perceptron, TrainedClassifier,
};
pub use gboost::{train_gboost, GradientBoost};
pub use tfidf::{tfidf_fit, TfidfVectorizer};

/// One candidate suffix for one prefix after deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sample_id: u32,
    pub suffix: Vec<TokenId>,
    /// Mean per-token NLL of the suffix given its prefix.
    pub loss: f64,
    /// Number of distinct suffixes generated for this prefix.
    pub count: usize,
    pub is_correct: bool,
}

/// Text form used for TF-IDF: prefix and suffix token ids, space-joined.
pub fn render_text(prefix: &[TokenId], suffix: &[TokenId]) -> String {
    let mut out = String::with_capacity(4 * (prefix.len() + suffix.len()));
    for (i, t) in prefix.iter().chain(suffix).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.to_string());
    }
    out
}

/// Feature rows [loss, count, tfidf...] in candidate order. `texts[i]` is
/// the rendered prefix + suffix text of `candidates[i]`.
pub fn build_features(
    candidates: &[Candidate],
    texts: &[String],
    vectorizer: &TfidfVectorizer,
) -> Result<Vec<Vec<f64>>> {
    if candidates.len() != texts.len() {
        return Err(Error::Argument(format!(
            "{} candidates but {} texts",
            candidates.len(),
            texts.len()
        )));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for (cand, text) in candidates.iter().zip(texts) {
        let mut row = Vec::with_capacity(2 + vectorizer.dim());
        row.push(cand.loss);
        row.push(cand.count as f64);
        row.extend(vectorizer.transform(text));
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
fn precision_recall(predictions: &[bool], labels: &[bool]) -> (f64, f64) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    (precision, recall)
}

/// Add-one smoothed precision and recall, pulled toward 0.5 when the
/// supporting counts are small.
fn smoothed_precision_recall(predictions: &[bool], labels: &[bool]) -> (f64, f64) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = (tp + 1) as f64 / (tp + fp + 2) as f64;
    let recall = (tp + 1) as f64 / (tp + fn_ + 2) as f64;
    (precision, recall)
}

fn fit_grid_point(
    name: &str,
    hyper: f64,
    x: &[Vec<f64>],
    y: &[bool],
) -> Result<TrainedClassifier> {
    Ok(match name {
        "logreg" => TrainedClassifier::Logreg(train_logreg(x, y, hyper, 0.1, 500)?),
        "gnb" => TrainedClassifier::Gnb(train_gnb(x, y)?),
        "gboost" => TrainedClassifier::Gboost(train_gboost(x, y, hyper as usize, 2, 0.1)?),
        "perceptron" => {
            TrainedClassifier::Perceptron(train_perceptron(x, y, hyper as usize, 1.0)?)
        }
        other => return Err(Error::Argument(format!("unknown classifier {other:?}"))),
    })
}

const GRID: &[(&str, f64)] = &[
    ("logreg", 1e-4),
    ("logreg", 1e-2),
    ("gnb", 0.0),
    ("gboost", 100.0),
    ("gboost", 200.0),
    ("perceptron", 25.0),
    ("perceptron", 50.0),
];

/// Train one classifier by name with its default hyperparameters.
pub fn train_named(name: &str, x: &[Vec<f64>], y: &[bool]) -> Result<TrainedClassifier> {
    let hyper = match name {
        "logreg" => 1e-4,
        "gnb" => 0.0,
        "gboost" => 200.0,
        "perceptron" => 50.0,
        other => return Err(Error::Argument(format!("unknown classifier {other:?}"))),
    };
    fit_grid_point(name, hyper, x, y)
}

/// Grid search over every classifier family: the winner maximizes
/// validation precision, ties broken by validation recall, then by grid
/// order. Both scores are add-one smoothed, so a perfect streak over a
/// handful of predictions cannot outrank a near-perfect classifier with
/// real coverage. Fully deterministic. Grid points whose fit fails (for
/// example single-class labels, which only gboost accepts) are skipped;
/// the call errors only when every point fails.
pub fn auto_select(
    x_train: &[Vec<f64>],
    y_train: &[bool],
    x_val: &[Vec<f64>],
    y_val: &[bool],
) -> Result<TrainedClassifier> {
    let mut best: Option<(f64, f64, TrainedClassifier)> = None;
    let mut last_err = None;
    for &(name, hyper) in GRID {
        let clf = match fit_grid_point(name, hyper, x_train, y_train) {
            Ok(clf) => clf,
            Err(err) => {
                last_err = Some(err);
                continue;
            }
        };
        let predictions: Vec<bool> = x_val.iter().map(|row| clf.predict(row)).collect();
        let (precision, recall) = smoothed_precision_recall(&predictions, y_val);
        let better = match &best {
            None => true,
            Some((bp, br, _)) => {
                precision > *bp || (precision == *bp && recall > *br)
            }
        };
        if better {
            best = Some((precision, recall, clf));
        }
    }
    match best {
        Some((_, _, clf)) => Ok(clf),
        None => Err(last_err.expect("grid is non-empty")),
    }
}

/// One emitted prediction of the ranked output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedPrediction {
    pub sample_id: u32,
    pub suffix: Vec<TokenId>,
    pub confidence: f64,
}

/// Confidence ordering of one candidate per sample. With probabilities,
/// every candidate is emitted sorted by P(member) descending. Without
/// them, predicted non-members are dropped and the rest sort by loss
/// ascending with confidence = -loss. Ties break by sample_id.
pub fn order_predictions(
    clf: &TrainedClassifier,
    candidates: &[Candidate],
    features: &[Vec<f64>],
) -> Result<Vec<OrderedPrediction>> {
    if candidates.len() != features.len() {
        return Err(Error::Argument(format!(
            "{} candidates but {} feature rows",
            candidates.len(),
            features.len()
        )));
    }
    let mut out: Vec<OrderedPrediction> = Vec::new();
    for (cand, row) in candidates.iter().zip(features) {
        match clf.predict_proba(row) {
            Some(p) => out.push(OrderedPrediction {
                sample_id: cand.sample_id,
                suffix: cand.suffix.clone(),
                confidence: p,
            }),
            None => {
                if clf.predict(row) {
                    out.push(OrderedPrediction {
                        sample_id: cand.sample_id,
                        suffix: cand.suffix.clone(),
                        confidence: -cand.loss,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.sample_id.cmp(&b.sample_id))
    });
    Ok(out)
}

/// Importance of each feature group, as metric degradation under shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub loss: f64,
    pub count: f64,
    pub text: f64,
}

pub fn classification_accuracy(
    clf: &TrainedClassifier,
    x: &[Vec<f64>],
    y: &[bool],
) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let correct = x.iter().zip(y).filter(|(row, &l)| clf.predict(row) == l).count();
    correct as f64 / x.len() as f64
}

/// Permutation importance over the three feature groups of a feature row:
/// loss (column 0), count (column 1), and the TF-IDF block (columns 2..).
/// Each group's columns are shuffled jointly by a seeded row permutation;
/// importance = metric(original) - mean metric over `n_repeats` shuffles.
pub fn permutation_importance<F>(
    clf: &TrainedClassifier,
    x: &[Vec<f64>],
    y: &[bool],
    metric: F,
    n_repeats: usize,
    seed: u64,
) -> Result<FeatureImportance>
where
    F: Fn(&TrainedClassifier, &[Vec<f64>], &[bool]) -> f64,
{
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Argument("need matching non-empty features and labels".into()));
    }
    if n_repeats == 0 {
        return Err(Error::Argument("n_repeats must be at least 1".into()));
    }
    let dim = x[0].len();
    if dim < 2 {
        return Err(Error::Argument("feature rows must hold at least loss and count".into()));
    }
    let baseline = metric(clf, x, y);
    let groups: [Vec<usize>; 3] = [vec![0], vec![1], (2..dim).collect()];
    let mut scores = [0.0f64; 3];
    for (g, cols) in groups.iter().enumerate() {
        let mut total = 0.0;
        for rep in 0..n_repeats {
            let mut perm: Vec<usize> = (0..x.len()).collect();
            let mut rng = seeds::stream_rng(seed, &[g as u64, rep as u64]);
            perm.shuffle(&mut rng);
            let shuffled: Vec<Vec<f64>> = x
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut new_row = row.clone();
                    for &c in cols.iter() {
                        new_row[c] = x[perm[i]][c];
                    }
                    new_row
                })
                .collect();
            total += metric(clf, &shuffled, y);
        }
        scores[g] = baseline - total / n_repeats as f64;
    }
    Ok(FeatureImportance { loss: scores[0], count: scores[1], text: scores[2] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn candidate(sample_id: u32, loss: f64, count: usize) -> Candidate {
        Candidate { sample_id, suffix: vec![sample_id, 0], loss, count, is_correct: false }
    }

    #[test]
    fn text_rendering_joins_prefix_and_suffix() {
        assert_eq!(render_text(&[1, 2], &[3]), "1 2 3");
        assert_eq!(render_text(&[], &[]), "");
        assert_eq!(render_text(&[17], &[]), "17");
    }

    #[test]
    fn feature_rows_carry_loss_count_then_text() {
        let vec = tfidf_fit(&["5 6", "7"]).unwrap();
        let cands = vec![candidate(0, 0.2, 3), candidate(1, 0.2, 3)];
        let texts = vec![String::new(), String::new()];
        let rows = build_features(&cands, &texts, &vec).unwrap();
        assert_eq!(rows[0], vec![0.2, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(rows[0], rows[1]);
        for row in &rows {
            assert_eq!(row.len(), 2 + vec.dim());
        }
    }

    #[test]
    fn feature_rows_reject_length_mismatch() {
        let vec = tfidf_fit(&["1"]).unwrap();
        assert!(build_features(&[candidate(0, 0.1, 1)], &[], &vec).is_err());
    }

    /// Loss < 1 means member, loss > 1 means non-member; other features
    /// are uninformative noise.
    fn loss_separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = seeds::stream_rng(seed, &[3003]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let member = i % 2 == 0;
            let loss = if member { rng.gen_range(0.1..0.9) } else { rng.gen_range(1.1..3.0) };
            x.push(vec![loss, rng.gen_range(1.0..5.0), rng.gen_range(-1.0..1.0)]);
            y.push(member);
        }
        (x, y)
    }

    #[test]
    fn auto_select_reaches_full_precision_on_separable_data() {
        let (x_train, y_train) = loss_separable(60, 1);
        let (x_val, y_val) = loss_separable(40, 2);
        let clf = auto_select(&x_train, &y_train, &x_val, &y_val).unwrap();
        let predictions: Vec<bool> = x_val.iter().map(|r| clf.predict(r)).collect();
        let (precision, _) = precision_recall(&predictions, &y_val);
        assert_eq!(precision, 1.0);
    }

    #[test]
    fn auto_select_is_deterministic() {
        let (x_train, y_train) = loss_separable(30, 5);
        let (x_val, y_val) = loss_separable(20, 6);
        let a = auto_select(&x_train, &y_train, &x_val, &y_val).unwrap();
        let b = auto_select(&x_train, &y_train, &x_val, &y_val).unwrap();
        assert_eq!(a.name(), b.name());
        for row in &x_val {
            assert_eq!(a.predict(row), b.predict(row));
            assert_eq!(a.predict_proba(row), b.predict_proba(row));
        }
    }

    #[test]
    fn auto_select_survives_single_class_labels() {
        // Only gboost fits a single-class dataset, so the grid must fall
        // through to it instead of aborting on the first failing family.
        let x = vec![vec![1.0, 1.0, 0.0], vec![2.0, 1.0, 0.0]];
        let clf = auto_select(&x, &[true, true], &x, &[true, true]).unwrap();
        assert_eq!(clf.name(), "gboost");
    }

    #[test]
    fn auto_select_errors_when_nothing_fits() {
        assert!(auto_select(&[], &[], &[], &[]).is_err());
    }

    #[test]
    fn train_named_covers_every_family() {
        let (x, y) = loss_separable(30, 8);
        for name in ["logreg", "gnb", "gboost", "perceptron"] {
            let clf = train_named(name, &x, &y).unwrap();
            assert_eq!(clf.name(), name);
        }
        assert!(train_named("mlp", &x, &y).is_err());
    }

    #[test]
    fn proba_ordering_sorts_descending_with_id_ties() {
        // LogReg with weight 1 on a single logit feature: proba(row) is a
        // chosen value exactly.
        let clf = TrainedClassifier::Logreg(LogReg { weights: vec![1.0], bias: 0.0 });
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let cands = vec![candidate(1, 0.5, 1), candidate(2, 0.5, 1), candidate(3, 0.5, 1)];
        let features = vec![vec![logit(0.9)], vec![logit(0.2)], vec![logit(0.7)]];
        let ranked = order_predictions(&clf, &cands, &features).unwrap();
        let ids: Vec<u32> = ranked.iter().map(|p| p.sample_id).collect();
        assert_eq!(ids, vec![1, 3, 2]);
        assert!((ranked[0].confidence - 0.9).abs() < 1e-12);
        for w in ranked.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }

        let tied = vec![vec![logit(0.4)], vec![logit(0.4)], vec![logit(0.4)]];
        let ranked = order_predictions(&clf, &cands, &tied).unwrap();
        let ids: Vec<u32> = ranked.iter().map(|p| p.sample_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn no_proba_path_filters_then_sorts_by_loss() {
        // score = -x0 + 1: positive (member) iff loss < 1.
        let clf = TrainedClassifier::Perceptron(Perceptron { weights: vec![-1.0], bias: 1.0 });
        let cands = vec![candidate(1, 0.5, 1), candidate(2, 0.1, 1), candidate(3, 2.0, 1)];
        let features: Vec<Vec<f64>> = cands.iter().map(|c| vec![c.loss]).collect();
        let ranked = order_predictions(&clf, &cands, &features).unwrap();
        let ids: Vec<u32> = ranked.iter().map(|p| p.sample_id).collect();
        assert_eq!(ids, vec![2, 1]);
        assert!((ranked[0].confidence - (-0.1)).abs() < 1e-12);

        let all_negative = TrainedClassifier::Perceptron(Perceptron {
            weights: vec![0.0],
            bias: -1.0,
        });
        let ranked = order_predictions(&all_negative, &cands, &features).unwrap();
        assert!(ranked.is_empty());
    }

    #[test]
    fn importance_flags_the_predictive_feature() {
        // Column 0 fully determines the label; columns 1 and 2.. are
        // constant, hence worthless.
        let n = 200;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let member = i % 2 == 0;
            x.push(vec![if member { 0.0 } else { 2.0 }, 1.0, 0.5, 0.5]);
            y.push(member);
        }
        let clf = TrainedClassifier::Gnb(train_gnb(&x, &y).unwrap());
        let imp =
            permutation_importance(&clf, &x, &y, classification_accuracy, 10, 7).unwrap();
        assert!((imp.loss - 0.5).abs() < 0.05, "loss importance {}", imp.loss);
        assert!(imp.count.abs() <= 0.02);
        assert!(imp.text.abs() <= 0.02);
    }

    #[test]
    fn importance_ignores_sample_order() {
        let (x, y) = loss_separable(80, 11);
        let clf = TrainedClassifier::Gnb(train_gnb(&x, &y).unwrap());
        let a = permutation_importance(&clf, &x, &y, classification_accuracy, 5, 3).unwrap();

        let mut reordered: Vec<(Vec<f64>, bool)> =
            x.iter().cloned().zip(y.iter().copied()).collect();
        reordered.reverse();
        let rx: Vec<Vec<f64>> = reordered.iter().map(|(r, _)| r.clone()).collect();
        let ry: Vec<bool> = reordered.iter().map(|(_, l)| *l).collect();
        let b = permutation_importance(&clf, &rx, &ry, classification_accuracy, 5, 3).unwrap();
        assert!((a.loss - b.loss).abs() < 0.05);
        assert!((a.count - b.count).abs() < 0.05);
        assert!((a.text - b.text).abs() < 0.05);
    }

    #[test]
    fn importance_validates_inputs() {
        let clf = TrainedClassifier::Logreg(LogReg { weights: vec![1.0, 1.0], bias: 0.0 });
        let x = vec![vec![1.0, 1.0]];
        assert!(permutation_importance(&clf, &x, &[true], classification_accuracy, 0, 0)
            .is_err());
        assert!(permutation_importance(&clf, &[], &[], classification_accuracy, 1, 0)
            .is_err());
    }
}
