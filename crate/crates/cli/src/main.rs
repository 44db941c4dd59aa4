//! Command-line front end for the extraction benchmark. Each subcommand
//! reads one key=value config file, caches its artifacts under the output
//! directory, and is bit-deterministic for a fixed seed at any thread
//! count.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use exbench_core::corpus::{extract_samples, split_samples, synth_corpus, Corpus, ExtractionSample};
use exbench_core::lm::{train_ngram, NGramModel};
use exbench_core::report::write_report;
use exbench_core::{attack, AttackReport};
use serde::{Deserialize, Serialize};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "exbench",
    about = "Two-stage training-data extraction benchmark: candidate generation plus membership inference over a synthetic canary corpus",
    version
)]
struct Cli {
    /// Key=value run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads; results are identical for any value.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    threads: usize,

    /// Output directory, overriding the config's `out` key.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// False-positive budget, overriding the config's `fpr` key.
    #[arg(long, global = true, value_name = "R")]
    fpr: Option<f64>,

    /// Seed, overriding the config's `seed` key.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the canary corpus and carve extraction samples.
    Corpus,
    /// Train the n-gram model on the cached corpus.
    Train,
    /// Run the two-stage attack and write the report bundle.
    Attack,
    /// Play the membership-inference security game.
    Game,
    /// Re-render the report bundle from a cached attack report.
    Report,
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let Some(config_path) = &cli.config else {
        bail!("--config PATH is required");
    };
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(fpr) = cli.fpr {
        cfg.fpr = fpr;
    }
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("thread pool setup")?;

    match cli.cmd {
        Cmd::Corpus => cmd_corpus(&cfg),
        Cmd::Train => cmd_train(&cfg),
        Cmd::Attack => cmd_attack(&cfg),
        Cmd::Game => cmd_game(&cfg),
        Cmd::Report => cmd_report(&cfg),
    }
}

fn corpus_paths(out: &Path) -> (PathBuf, PathBuf) {
    (out.join("corpus.txt"), out.join("corpus.meta.json"))
}

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    train_frac: f64,
    train_ids: Vec<u32>,
    test_ids: Vec<u32>,
}

fn cmd_corpus(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.corpus_spec();
    let corpus = synth_corpus(&spec)?;
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    let (docs_path, meta_path) = corpus_paths(&cfg.out);
    corpus.save(&docs_path, &meta_path)?;

    let samples = extract_samples(&corpus, cfg.prefix_len, cfg.suffix_len)?;
    let mut jsonl = String::new();
    for sample in &samples {
        jsonl.push_str(&serde_json::to_string(sample)?);
        jsonl.push('\n');
    }
    fs::write(cfg.out.join("samples.jsonl"), jsonl)?;

    let (train, test) = split_samples(samples.clone(), cfg.train_frac)?;
    let manifest = SplitManifest {
        train_frac: cfg.train_frac,
        train_ids: train.iter().map(|s| s.sample_id).collect(),
        test_ids: test.iter().map(|s| s.sample_id).collect(),
    };
    fs::write(
        cfg.out.join("splits.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let tokens: usize = corpus.docs.iter().map(Vec::len).sum();
    println!(
        "corpus: {} docs, {tokens} tokens, {} canaries; {} samples ({} train / {} test) under {}",
        corpus.docs.len(),
        corpus.canaries.len(),
        samples.len(),
        manifest.train_ids.len(),
        manifest.test_ids.len(),
        cfg.out.display()
    );
    Ok(())
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let (docs_path, meta_path) = corpus_paths(&cfg.out);
    Corpus::load(&docs_path, &meta_path).with_context(|| {
        format!(
            "cannot load corpus from {}; run `exbench corpus` first",
            cfg.out.display()
        )
    })
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let corpus = load_corpus(cfg)?;
    let model = train_ngram(
        &corpus,
        cfg.order,
        cfg.add_k,
        &cfg.lambdas(),
        cfg.embed_dim,
        cfg.seed,
    )?;
    let model_path = cfg.out.join("model.bin");
    model.save(&model_path)?;
    println!(
        "trained order-{} model on {} docs; perplexity {}; saved {}",
        cfg.order,
        corpus.docs.len(),
        model.corpus_perplexity(&corpus),
        model_path.display()
    );
    Ok(())
}

fn load_samples(cfg: &RunConfig) -> Result<(Vec<ExtractionSample>, Vec<ExtractionSample>)> {
    let samples_path = cfg.out.join("samples.jsonl");
    let text = fs::read_to_string(&samples_path).with_context(|| {
        format!(
            "cannot read {}; run `exbench corpus` first",
            samples_path.display()
        )
    })?;
    let mut by_id = std::collections::BTreeMap::new();
    for line in text.lines() {
        let sample: ExtractionSample = serde_json::from_str(line)?;
        by_id.insert(sample.sample_id, sample);
    }
    let manifest_path = cfg.out.join("splits.json");
    let manifest: SplitManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path)
            .with_context(|| format!("cannot read {}", manifest_path.display()))?,
    )?;
    let pick = |ids: &[u32]| -> Result<Vec<ExtractionSample>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .cloned()
                    .with_context(|| format!("split manifest names unknown sample {id}"))
            })
            .collect()
    };
    Ok((pick(&manifest.train_ids)?, pick(&manifest.test_ids)?))
}

fn load_model(cfg: &RunConfig) -> Result<NGramModel> {
    let model_path = cfg.out.join("model.bin");
    NGramModel::load(&model_path).with_context(|| {
        format!(
            "cannot load model {}; run `exbench train` first",
            model_path.display()
        )
    })
}

fn cmd_attack(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let (train, test) = load_samples(cfg)?;

    let decode = cfg.decode_params();
    let generations = attack::generate_candidates(&model, &test, &decode)?;
    let mut jsonl = String::new();
    for (sample_id, candidates) in &generations {
        jsonl.push_str(&serde_json::to_string(&serde_json::json!({
            "sample_id": sample_id,
            "candidates": candidates,
        }))?);
        jsonl.push('\n');
    }
    fs::write(cfg.out.join("generations.jsonl"), jsonl)?;

    let report = attack::run_attack(&model, &train, &test, &cfg.attack_config())?;
    write_report(&report, &cfg.out)?;
    println!(
        "recall@{}%FPR {} precision {} stage1_recall {}",
        report.metrics.fpr * 100.0,
        report.metrics.recall_at_fpr,
        report.metrics.precision,
        report.metrics.stage1_recall
    );
    Ok(())
}

#[derive(Serialize)]
struct GameSummary {
    adversary: String,
    trials: usize,
    wins: usize,
    win_rate: f64,
    ci95_half_width: f64,
    bit_zero_fraction: f64,
    trained_model: bool,
}

fn cmd_game(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.corpus_spec();
    let mut summaries = Vec::new();
    for &adversary in &cfg.adversaries {
        let outcome =
            exbench_core::game::security_game(&spec, adversary, cfg.trials, cfg.game_train_model)?;
        let p = outcome.win_rate;
        let ci = 1.96 * (p * (1.0 - p) / outcome.trials as f64).sqrt();
        println!(
            "{adversary} adversary: win rate {p} +- {ci} over {} trials ({} wins)",
            outcome.trials, outcome.wins
        );
        summaries.push(GameSummary {
            adversary: adversary.to_string(),
            trials: outcome.trials,
            wins: outcome.wins,
            win_rate: p,
            ci95_half_width: ci,
            bit_zero_fraction: outcome.bit_zero_fraction,
            trained_model: cfg.game_train_model,
        });
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(
        cfg.out.join("game.json"),
        serde_json::to_string_pretty(&summaries)? + "\n",
    )?;
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let report_path = cfg.out.join("attack_report.json");
    let text = fs::read_to_string(&report_path).with_context(|| {
        format!(
            "cannot read {}; run `exbench attack` first",
            report_path.display()
        )
    })?;
    let report: AttackReport = serde_json::from_str(&text)?;
    let files = write_report(&report, &cfg.out)?;
    println!("rendered {} report files under {}", files.len(), cfg.out.display());
    Ok(())
}
