//! End-to-end extraction attack: candidate generation per prefix, the
//! lowest-loss filter, membership-classifier ordering, and scoring.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ExtractionSample, TokenId};
use crate::decoding::{decode_sample, DecodeParams};
use crate::error::{Error, Result};
use crate::eval::{self, Metrics, RankedItem};
use crate::lm::LanguageModel;
use crate::mia::{
    auto_select, build_features, classification_accuracy, order_predictions,
    permutation_importance, render_text, tfidf_fit, train_named, Candidate, FeatureImportance,
    TrainedClassifier,
};
use crate::seeds;

pub const DEFAULT_FPR: f64 = 0.10;

/// Stage-2 ordering strategy: a classifier family, automatic selection
/// over all of them, or the loss-ordered baseline with no classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierChoice {
    Auto,
    Logreg,
    Gnb,
    Gboost,
    Perceptron,
    None,
}

impl FromStr for ClassifierChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "logreg" => Ok(Self::Logreg),
            "gnb" => Ok(Self::Gnb),
            "gboost" => Ok(Self::Gboost),
            "perceptron" => Ok(Self::Perceptron),
            "none" => Ok(Self::None),
            other => Err(Error::Argument(format!(
                "unknown classifier choice {other:?}; expected auto|logreg|gnb|gboost|perceptron|none"
            ))),
        }
    }
}

impl fmt::Display for ClassifierChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Auto => "auto",
            Self::Logreg => "logreg",
            Self::Gnb => "gnb",
            Self::Gboost => "gboost",
            Self::Perceptron => "perceptron",
            Self::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub decode: DecodeParams,
    pub classifier_choice: ClassifierChoice,
    pub fpr_target: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        if !(self.fpr_target > 0.0 && self.fpr_target < 1.0) {
            return Err(Error::Config(format!(
                "fpr_target must be in (0, 1), got {}",
                self.fpr_target
            )));
        }
        Ok(())
    }
}

/// Token-wise equality of two aligned suffixes.
pub fn exact_match(a: &[TokenId], b: &[TokenId]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "suffix lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a == b)
}

/// Decode every sample, deduplicate the generations, and score each
/// distinct suffix with the model loss. `count` is the number of distinct
/// suffixes of that prefix, shared by all its candidates; a generated
/// suffix of the wrong length is never marked correct.
pub fn generate_candidates<M: LanguageModel + ?Sized>(
    model: &M,
    samples: &[ExtractionSample],
    decode: &DecodeParams,
) -> Result<BTreeMap<u32, Vec<Candidate>>> {
    decode.validate()?;
    let mut ids = HashSet::with_capacity(samples.len());
    for sample in samples {
        if !ids.insert(sample.sample_id) {
            return Err(Error::Argument(format!(
                "duplicate sample_id {} in candidate generation",
                sample.sample_id
            )));
        }
    }
    let per_sample: Vec<(u32, Vec<Candidate>)> = samples
        .par_iter()
        .map(|sample| -> Result<(u32, Vec<Candidate>)> {
            let generations = decode_sample(model, &sample.prefix, sample.sample_id, decode)?;
            let distinct: BTreeSet<Vec<TokenId>> =
                generations.into_iter().map(|g| g.suffix).collect();
            let count = distinct.len();
            let mut list = Vec::with_capacity(count);
            for suffix in distinct {
                let loss = model.sequence_loss(&sample.prefix, &suffix)?;
                let is_correct = exact_match(&suffix, &sample.suffix).unwrap_or(false);
                list.push(Candidate {
                    sample_id: sample.sample_id,
                    suffix,
                    loss,
                    count,
                    is_correct,
                });
            }
            Ok((sample.sample_id, list))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sample.into_iter().collect())
}

/// Keep the minimum-loss candidate of every prefix; loss ties break by
/// lexicographically smallest suffix.
pub fn filter_lowest_loss(candidates: &BTreeMap<u32, Vec<Candidate>>) -> Result<Vec<Candidate>> {
    let mut kept = Vec::with_capacity(candidates.len());
    for (sample_id, list) in candidates {
        let best = list
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss).then_with(|| a.suffix.cmp(&b.suffix)))
            .ok_or_else(|| {
                Error::Argument(format!("sample {sample_id} has an empty candidate list"))
            })?;
        kept.push(best.clone());
    }
    Ok(kept)
}

/// Fraction of prefixes whose candidate list contains the true suffix.
pub fn stage1_recall(candidates: &BTreeMap<u32, Vec<Candidate>>) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let hits = candidates
        .values()
        .filter(|list| list.iter().any(|c| c.is_correct))
        .count();
    hits as f64 / candidates.len() as f64
}

/// Per-duplication-bucket (hits, totals) of pre-filter extraction.
pub fn dup_bucket_hits(
    candidates: &BTreeMap<u32, Vec<Candidate>>,
    samples: &[ExtractionSample],
) -> BTreeMap<u32, (usize, usize)> {
    let mut buckets: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for sample in samples {
        let Some(list) = candidates.get(&sample.sample_id) else { continue };
        let entry = buckets.entry(sample.dup_count).or_insert((0, 0));
        entry.1 += 1;
        if list.iter().any(|c| c.is_correct) {
            entry.0 += 1;
        }
    }
    buckets
}

/// One exported feature row of the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sample_id: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config: AttackConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub classifier: Option<TrainedClassifier>,
    /// Confidence-ordered predictions over the test split.
    pub ranked: Vec<RankedItem>,
    pub metrics: Metrics,
    /// Rank of the true suffix in each loss-ordered candidate list.
    pub rank_hist: BTreeMap<usize, usize>,
    pub importance: Option<FeatureImportance>,
    pub test_features: Vec<FeatureRow>,
}

fn texts_for(filtered: &[Candidate], by_id: &BTreeMap<u32, &ExtractionSample>) -> Vec<String> {
    filtered
        .iter()
        .map(|c| {
            let prefix = by_id
                .get(&c.sample_id)
                .map(|s| s.prefix.as_slice())
                .unwrap_or(&[]);
            render_text(prefix, &c.suffix)
        })
        .collect()
}

/// Run the full two-stage attack: generate candidates for both splits,
/// keep the lowest-loss candidate per prefix, train the configured
/// classifier on exact-match labels of the train split, and order the
/// test predictions by confidence. `classifier_choice = none` skips
/// stage 2 and orders test candidates by ascending loss.
pub fn run_attack<M: LanguageModel + ?Sized>(
    model: &M,
    train: &[ExtractionSample],
    test: &[ExtractionSample],
    config: &AttackConfig,
) -> Result<AttackReport> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::Argument("attack needs a non-empty test split".into()));
    }
    let train_ids: HashSet<u32> = train.iter().map(|s| s.sample_id).collect();
    if let Some(shared) = test.iter().find(|s| train_ids.contains(&s.sample_id)) {
        return Err(Error::Argument(format!(
            "sample_id {} appears in both train and test splits",
            shared.sample_id
        )));
    }
    for sample in train.iter().chain(test) {
        if sample.suffix.len() != config.decode.suffix_len {
            return Err(Error::Argument(format!(
                "sample {} has a {}-token suffix but decoding produces {}",
                sample.sample_id,
                sample.suffix.len(),
                config.decode.suffix_len
            )));
        }
    }

    let gen_test = generate_candidates(model, test, &config.decode)?;
    let filtered_test = filter_lowest_loss(&gen_test)?;
    let stage1 = stage1_recall(&gen_test);
    let stage1_post = filtered_test.iter().filter(|c| c.is_correct).count() as f64
        / filtered_test.len() as f64;

    let test_by_id: BTreeMap<u32, &ExtractionSample> =
        test.iter().map(|s| (s.sample_id, s)).collect();
    let sorted_lists: Vec<(Vec<Vec<TokenId>>, &[TokenId])> = test
        .iter()
        .map(|sample| {
            let mut list = gen_test[&sample.sample_id].clone();
            list.sort_by(|a, b| a.loss.total_cmp(&b.loss).then_with(|| a.suffix.cmp(&b.suffix)));
            let suffixes = list.into_iter().map(|c| c.suffix).collect();
            (suffixes, sample.suffix.as_slice())
        })
        .collect();
    let rank_hist = eval::rank_histogram(
        sorted_lists.iter().map(|(lists, truth)| (lists.as_slice(), *truth)),
    );

    let labels_test: Vec<bool> = filtered_test.iter().map(|c| c.is_correct).collect();
    let correct_by_id: BTreeMap<u32, bool> =
        filtered_test.iter().map(|c| (c.sample_id, c.is_correct)).collect();

    let classifier;
    let ranked: Vec<RankedItem>;
    let confusion;
    let importance;
    let test_features;

    if config.classifier_choice == ClassifierChoice::None {
        let mut order: Vec<&Candidate> = filtered_test.iter().collect();
        order.sort_by(|a, b| a.loss.total_cmp(&b.loss).then(a.sample_id.cmp(&b.sample_id)));
        ranked = order
            .iter()
            .map(|c| RankedItem {
                sample_id: c.sample_id,
                correct: c.is_correct,
                confidence: -c.loss,
            })
            .collect();
        confusion = eval::confusion(&vec![true; labels_test.len()], &labels_test)?;
        classifier = None;
        importance = None;
        test_features = Vec::new();
    } else {
        let gen_train = generate_candidates(model, train, &config.decode)?;
        let filtered_train = filter_lowest_loss(&gen_train)?;
        let train_by_id: BTreeMap<u32, &ExtractionSample> =
            train.iter().map(|s| (s.sample_id, s)).collect();

        let texts_train = texts_for(&filtered_train, &train_by_id);
        let vectorizer = tfidf_fit(&texts_train)?;
        let x_train = build_features(&filtered_train, &texts_train, &vectorizer)?;
        let y_train: Vec<bool> = filtered_train.iter().map(|c| c.is_correct).collect();

        let clf = match config.classifier_choice {
            ClassifierChoice::Auto => {
                // Every third row validates: rows arrive in sample_id order
                // with duplication cycling through the buckets, so an
                // interleaved split keeps both sides bucket-balanced.
                if x_train.len() < 3 {
                    auto_select(&x_train, &y_train, &x_train, &y_train)?
                } else {
                    let (mut x_fit, mut y_fit) = (Vec::new(), Vec::new());
                    let (mut x_val, mut y_val) = (Vec::new(), Vec::new());
                    for (i, (row, &label)) in x_train.iter().zip(&y_train).enumerate() {
                        if i % 3 == 2 {
                            x_val.push(row.clone());
                            y_val.push(label);
                        } else {
                            x_fit.push(row.clone());
                            y_fit.push(label);
                        }
                    }
                    auto_select(&x_fit, &y_fit, &x_val, &y_val)?
                }
            }
            choice => train_named(&choice.to_string(), &x_train, &y_train)?,
        };

        let texts_test = texts_for(&filtered_test, &test_by_id);
        let x_test = build_features(&filtered_test, &texts_test, &vectorizer)?;
        let ordered = order_predictions(&clf, &filtered_test, &x_test)?;
        ranked = ordered
            .iter()
            .map(|p| RankedItem {
                sample_id: p.sample_id,
                correct: correct_by_id[&p.sample_id],
                confidence: p.confidence,
            })
            .collect();

        let predictions: Vec<bool> = x_test.iter().map(|row| clf.predict(row)).collect();
        confusion = eval::confusion(&predictions, &labels_test)?;
        importance = Some(permutation_importance(
            &clf,
            &x_test,
            &labels_test,
            classification_accuracy,
            10,
            seeds::mix(config.seed, &[seeds::STREAM_SHUFFLE]),
        )?);
        test_features = filtered_test
            .iter()
            .zip(&x_test)
            .map(|(c, row)| FeatureRow { sample_id: c.sample_id, features: row.clone() })
            .collect();
        classifier = Some(clf);
    }

    let metrics = Metrics {
        recall_at_fpr: eval::recall_at_fpr(&ranked, test.len(), config.fpr_target)?,
        fpr: config.fpr_target,
        precision: confusion.precision(),
        recall: eval::ranked_recall(&ranked, test.len()),
        confusion,
        stage1_recall: stage1,
        stage1_recall_post_filter: stage1_post,
    };

    Ok(AttackReport {
        config: config.clone(),
        n_train: train.len(),
        n_test: test.len(),
        classifier,
        ranked,
        metrics,
        rank_hist,
        importance,
        test_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_samples, split_samples, synth_corpus, CorpusSpec};
    use crate::decoding::Strategy;
    use crate::lm::{default_lambdas, train_ngram, NGramModel};

    fn tiny_world(seed: u64, dup: u32, n_canaries: usize) -> (NGramModel, Vec<ExtractionSample>) {
        let spec = CorpusSpec {
            vocab_size: 64,
            n_background_docs: 120,
            doc_len: 120,
            n_canaries,
            canary_len: 24,
            dup_counts: vec![dup; n_canaries],
            seed,
        };
        let corpus = synth_corpus(&spec).unwrap();
        let model = train_ngram(&corpus, 5, 0.01, &default_lambdas(5), 32, seed).unwrap();
        let samples = extract_samples(&corpus, 12, 12).unwrap();
        (model, samples)
    }

    fn greedy_config(choice: ClassifierChoice, seed: u64) -> AttackConfig {
        AttackConfig {
            decode: DecodeParams {
                strategy: Strategy::Greedy,
                suffix_len: 12,
                num_generations: 1,
                alpha: 0.0,
                k: 1,
                beam_width: 1,
                seed,
            },
            classifier_choice: choice,
            fpr_target: DEFAULT_FPR,
            seed,
        }
    }

    #[test]
    fn exact_match_compares_aligned_suffixes() {
        assert!(exact_match(&[1, 2, 3], &[1, 2, 3]).unwrap());
        assert!(!exact_match(&[1, 2, 3], &[1, 2, 4]).unwrap());
        assert!(exact_match(&[], &[]).unwrap());
        assert!(exact_match(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn classifier_choice_parses_and_prints() {
        for name in ["auto", "logreg", "gnb", "gboost", "perceptron", "none"] {
            let choice: ClassifierChoice = name.parse().unwrap();
            assert_eq!(choice.to_string(), name);
        }
        assert!("svm".parse::<ClassifierChoice>().is_err());
    }

    fn candidate(sample_id: u32, suffix: Vec<TokenId>, loss: f64) -> Candidate {
        Candidate { sample_id, suffix, loss, count: 1, is_correct: false }
    }

    #[test]
    fn filter_keeps_minimum_loss_with_lexicographic_ties() {
        let mut map = BTreeMap::new();
        map.insert(
            7,
            vec![
                candidate(7, vec![5, 5], 0.5),
                candidate(7, vec![1, 1], 0.2),
                candidate(7, vec![2, 2], 0.9),
            ],
        );
        map.insert(
            9,
            vec![candidate(9, vec![4, 0], 0.3), candidate(9, vec![3, 9], 0.3)],
        );
        let kept = filter_lowest_loss(&map).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].suffix, vec![1, 1]);
        assert_eq!(kept[1].suffix, vec![3, 9]);

        map.insert(10, Vec::new());
        assert!(filter_lowest_loss(&map).is_err());
    }

    #[test]
    fn single_candidate_filters_to_itself() {
        let mut map = BTreeMap::new();
        map.insert(0, vec![candidate(0, vec![8], 1.4)]);
        let kept = filter_lowest_loss(&map).unwrap();
        assert_eq!(kept[0], candidate(0, vec![8], 1.4));
    }

    #[test]
    fn greedy_generation_yields_one_candidate_with_count_one() {
        let (model, samples) = tiny_world(3, 25, 6);
        let config = greedy_config(ClassifierChoice::None, 3);
        let map = generate_candidates(&model, &samples, &config.decode).unwrap();
        assert_eq!(map.len(), samples.len());
        for list in map.values() {
            assert_eq!(list.len(), 1);
            assert_eq!(list[0].count, 1);
        }
    }

    #[test]
    fn duplicate_generations_collapse_and_share_count() {
        let (model, samples) = tiny_world(4, 25, 4);
        let decode = DecodeParams {
            strategy: Strategy::TopkSample,
            suffix_len: 12,
            num_generations: 8,
            alpha: 0.0,
            k: 2,
            beam_width: 1,
            seed: 4,
        };
        let map = generate_candidates(&model, &samples, &decode).unwrap();
        for list in map.values() {
            let distinct: BTreeSet<&Vec<TokenId>> = list.iter().map(|c| &c.suffix).collect();
            assert_eq!(distinct.len(), list.len());
            assert!(list.len() <= 8);
            for c in list {
                assert_eq!(c.count, list.len());
            }
        }
    }

    #[test]
    fn duplicate_sample_ids_are_rejected() {
        let (model, samples) = tiny_world(5, 25, 2);
        let doubled = [samples.clone(), samples].concat();
        let config = greedy_config(ClassifierChoice::None, 5);
        assert!(generate_candidates(&model, &doubled, &config.decode).is_err());
    }

    #[test]
    fn memorized_world_reaches_full_recall() {
        let (model, samples) = tiny_world(6, 30, 12);
        let (train, test) = split_samples(samples, 0.5).unwrap();
        for choice in [ClassifierChoice::None, ClassifierChoice::Auto] {
            let config = greedy_config(choice, 6);
            let report = run_attack(&model, &train, &test, &config).unwrap();
            assert_eq!(report.metrics.recall_at_fpr, 1.0, "choice {choice}");
            assert_eq!(report.metrics.stage1_recall, 1.0);
            assert_eq!(report.metrics.stage1_recall_post_filter, 1.0);
            assert_eq!(report.rank_hist.get(&1), Some(&test.len()));
        }
    }

    #[test]
    fn untrained_model_extracts_nothing() {
        let (_, samples) = tiny_world(7, 25, 10);
        let model = NGramModel::untrained(64, 32, 7).unwrap();
        let (train, test) = split_samples(samples, 0.5).unwrap();
        let mut config = greedy_config(ClassifierChoice::Auto, 7);
        config.decode.strategy = Strategy::TopkSample;
        config.decode.num_generations = 4;
        config.decode.k = 64;
        let report = run_attack(&model, &train, &test, &config).unwrap();
        assert_eq!(report.metrics.recall_at_fpr, 0.0);
        assert_eq!(report.metrics.stage1_recall, 0.0);
        assert!(report.rank_hist.is_empty());
    }

    #[test]
    fn baseline_orders_by_ascending_loss() {
        let (model, samples) = tiny_world(8, 25, 10);
        let (_, test) = split_samples(samples, 0.3).unwrap();
        let config = greedy_config(ClassifierChoice::None, 8);
        let report = run_attack(&model, &[], &test, &config).unwrap();
        assert!(report.classifier.is_none());
        assert!(report.importance.is_none());
        assert!(report.test_features.is_empty());
        assert_eq!(report.ranked.len(), test.len());
        for w in report.ranked.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }
    }

    #[test]
    fn classifier_path_reports_features_and_importance() {
        let (model, samples) = tiny_world(9, 25, 12);
        let (train, test) = split_samples(samples, 0.5).unwrap();
        let config = greedy_config(ClassifierChoice::Gboost, 9);
        let report = run_attack(&model, &train, &test, &config).unwrap();
        assert_eq!(report.classifier.as_ref().map(|c| c.name()), Some("gboost"));
        assert!(report.importance.is_some());
        assert_eq!(report.test_features.len(), test.len());
        let dim = report.test_features[0].features.len();
        assert!(dim >= 2);
        for row in &report.test_features {
            assert_eq!(row.features.len(), dim);
        }
    }

    #[test]
    fn attack_is_deterministic() {
        let (model, samples) = tiny_world(10, 25, 10);
        let (train, test) = split_samples(samples, 0.5).unwrap();
        let config = greedy_config(ClassifierChoice::Auto, 10);
        let a = run_attack(&model, &train, &test, &config).unwrap();
        let b = run_attack(&model, &train, &test, &config).unwrap();
        assert_eq!(a, b);
        let json_a = serde_json::to_string(&a).unwrap();
        let json_b = serde_json::to_string(&b).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn report_roundtrips_through_json() {
        let (model, mut samples) = tiny_world(11, 25, 8);
        // Rewriting every other ground-truth suffix plants unextractable
        // samples, so the exact-match labels carry both classes.
        for sample in samples.iter_mut().step_by(2) {
            for t in &mut sample.suffix {
                *t = (*t + 1) % 64;
            }
        }
        let (train, test) = split_samples(samples, 0.5).unwrap();
        let config = greedy_config(ClassifierChoice::Logreg, 11);
        let report = run_attack(&model, &train, &test, &config).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: AttackReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (model, samples) = tiny_world(12, 25, 6);
        let (train, test) = split_samples(samples.clone(), 0.5).unwrap();

        let mut config = greedy_config(ClassifierChoice::None, 12);
        config.fpr_target = 0.0;
        assert!(run_attack(&model, &train, &test, &config).is_err());

        let config = greedy_config(ClassifierChoice::None, 12);
        assert!(run_attack(&model, &samples, &samples, &config).is_err());
        assert!(run_attack(&model, &train, &[], &config).is_err());

        let mut config = greedy_config(ClassifierChoice::None, 12);
        config.decode.suffix_len = 9;
        assert!(run_attack(&model, &train, &test, &config).is_err());
    }

    #[test]
    fn bucket_hits_group_by_dup_count() {
        let (model, mut samples) = tiny_world(13, 25, 6);
        for (i, sample) in samples.iter_mut().enumerate() {
            sample.dup_count = if i % 2 == 0 { 1 } else { 25 };
        }
        let config = greedy_config(ClassifierChoice::None, 13);
        let map = generate_candidates(&model, &samples, &config.decode).unwrap();
        let buckets = dup_bucket_hits(&map, &samples);
        let total: usize = buckets.values().map(|(_, n)| n).sum();
        assert_eq!(total, samples.len());
        for (hits, n) in buckets.values() {
            assert!(hits <= n);
        }
    }
}
