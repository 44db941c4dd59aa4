//! Plain key=value run configuration shared by every subcommand.
//!
//! Unset keys fall back to the default benchmark scale. Unknown and
//! duplicate keys are rejected by name, and `seed` is mandatory so no run
//! is accidentally unreproducible.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use exbench_core::corpus::CorpusSpec;
use exbench_core::decoding::{DecodeParams, Strategy};
use exbench_core::game::Adversary;
use exbench_core::lm::default_lambdas;
use exbench_core::{AttackConfig, ClassifierChoice};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,

    pub vocab_size: usize,
    pub n_background_docs: usize,
    pub doc_len: usize,
    pub n_canaries: usize,
    pub canary_len: usize,
    /// Cycle of duplication counts, repeated across the canaries.
    pub dup_counts: Vec<u32>,

    pub order: usize,
    pub add_k: f64,
    pub embed_dim: usize,
    pub lambdas: Option<Vec<f64>>,

    pub prefix_len: usize,
    pub suffix_len: usize,
    pub strategy: Strategy,
    pub num_generations: usize,
    pub alpha: f64,
    pub k: usize,
    pub beam_width: Option<usize>,

    pub train_frac: f64,
    pub classifier: ClassifierChoice,
    pub fpr: f64,

    pub trials: usize,
    pub adversaries: Vec<Adversary>,
    pub game_train_model: bool,
}

impl RunConfig {
    fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            out: PathBuf::from("out"),
            vocab_size: 256,
            n_background_docs: 2000,
            doc_len: 200,
            n_canaries: 400,
            canary_len: 100,
            dup_counts: vec![1, 2, 5, 10, 25],
            order: 5,
            add_k: 0.01,
            embed_dim: 32,
            lambdas: None,
            prefix_len: 50,
            suffix_len: 50,
            strategy: Strategy::Contrastive,
            num_generations: 100,
            alpha: 0.6,
            k: 4,
            beam_width: None,
            train_frac: 0.5,
            classifier: ClassifierChoice::Auto,
            fpr: 0.10,
            trials: 200,
            adversaries: vec![Adversary::Constant, Adversary::LossThreshold],
            game_train_model: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::with_seed(0);
        let mut seen = BTreeSet::new();
        let mut has_seed = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key=value, got {line:?}", lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                bail!("line {}: duplicate key {key:?}", lineno + 1);
            }
            match key {
                "seed" => {
                    cfg.seed = num(key, value)?;
                    has_seed = true;
                }
                "out" => cfg.out = PathBuf::from(value),
                "vocab_size" => cfg.vocab_size = num(key, value)?,
                "n_background_docs" => cfg.n_background_docs = num(key, value)?,
                "doc_len" => cfg.doc_len = num(key, value)?,
                "n_canaries" => cfg.n_canaries = num(key, value)?,
                "canary_len" => cfg.canary_len = num(key, value)?,
                "dup_counts" => cfg.dup_counts = list(key, value)?,
                "order" => cfg.order = num(key, value)?,
                "add_k" => cfg.add_k = num(key, value)?,
                "embed_dim" => cfg.embed_dim = num(key, value)?,
                "lambdas" => cfg.lambdas = Some(list(key, value)?),
                "prefix_len" => cfg.prefix_len = num(key, value)?,
                "suffix_len" => cfg.suffix_len = num(key, value)?,
                "strategy" => cfg.strategy = Strategy::from_str(value)?,
                "num_generations" => cfg.num_generations = num(key, value)?,
                "alpha" => cfg.alpha = num(key, value)?,
                "k" => cfg.k = num(key, value)?,
                "beam_width" => cfg.beam_width = Some(num(key, value)?),
                "train_frac" => cfg.train_frac = num(key, value)?,
                "classifier" => cfg.classifier = ClassifierChoice::from_str(value)?,
                "fpr" => cfg.fpr = num(key, value)?,
                "trials" => cfg.trials = num(key, value)?,
                "adversaries" => {
                    cfg.adversaries = value
                        .split(',')
                        .map(|s| Adversary::from_str(s.trim()))
                        .collect::<exbench_core::Result<_>>()?;
                }
                "game_train_model" => {
                    cfg.game_train_model = value
                        .parse()
                        .with_context(|| format!("key {key:?}: expected true or false, got {value:?}"))?;
                }
                _ => bail!("unknown config key {key:?}"),
            }
        }
        if !has_seed {
            bail!("config must set seed");
        }
        Ok(cfg)
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        let cycle = &self.dup_counts;
        CorpusSpec {
            vocab_size: self.vocab_size,
            n_background_docs: self.n_background_docs,
            doc_len: self.doc_len,
            n_canaries: self.n_canaries,
            canary_len: self.canary_len,
            dup_counts: (0..self.n_canaries).map(|i| cycle[i % cycle.len()]).collect(),
            seed: self.seed,
        }
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            strategy: self.strategy,
            suffix_len: self.suffix_len,
            num_generations: self.num_generations,
            alpha: self.alpha,
            k: self.k,
            beam_width: self.beam_width.unwrap_or(self.num_generations),
            seed: self.seed,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            decode: self.decode_params(),
            classifier_choice: self.classifier,
            fpr_target: self.fpr,
            seed: self.seed,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(|| default_lambdas(self.order))
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("key {key:?}: cannot parse {value:?} ({e})"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(|s| num(key, s.trim()))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("key {key:?}: expected a comma-separated list");
    }
    Ok(items)
}
