//! End-to-end tests of the `exbench` binary: artifact caching between
//! subcommands, determinism across reruns and thread counts, and the
//! diagnostics for broken configs and missing inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn exbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, out: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    let base = format!(
        "seed=5\n\
         out={}\n\
         vocab_size=32\n\
         n_background_docs=60\n\
         doc_len=80\n\
         n_canaries=20\n\
         canary_len=20\n\
         dup_counts=2,8\n\
         order=4\n\
         embed_dim=8\n\
         prefix_len=8\n\
         suffix_len=8\n\
         strategy=topk_sample\n\
         num_generations=3\n\
         k=3\n\
         trials=40\n\
         {extra}",
        out.display()
    );
    fs::write(&path, base).expect("config written");
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output dir listable")
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn help_prints_usage_and_exits_zero() {
    let out = exbench(&["--help"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("exbench"));
    assert!(stdout(&out).contains("attack"));
}

#[test]
fn config_flag_is_required() {
    let out = exbench(&["corpus"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn unknown_config_key_fails_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("run"), "wibble=1\n");
    let out = exbench(&["--config", cfg.to_str().unwrap(), "corpus"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("wibble"));
}

#[test]
fn corpus_artifacts_match_manifest_and_rerun_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg = write_config(tmp.path(), &out_a, "");

    let first = exbench(&["--config", cfg.to_str().unwrap(), "corpus"]);
    assert!(first.status.success(), "{}", stderr(&first));
    for name in ["corpus.txt", "corpus.meta.json", "samples.jsonl", "splits.json"] {
        assert!(out_a.join(name).exists(), "missing {name}");
    }
    let samples = fs::read_to_string(out_a.join("samples.jsonl")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("splits.json")).unwrap()).unwrap();
    let n_train = manifest["train_ids"].as_array().unwrap().len();
    let n_test = manifest["test_ids"].as_array().unwrap().len();
    assert_eq!(samples.lines().count(), 20);
    assert_eq!(n_train + n_test, 20);

    let second = exbench(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "corpus",
    ]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(read_dir_bytes(&out_a), read_dir_bytes(&out_b));
}

#[test]
fn train_without_corpus_fails_with_direction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("empty"), "");
    let out = exbench(&["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("corpus"));
}

#[test]
fn pipeline_is_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg_a = write_config(tmp.path(), &out_a, "");

    let mut summary = Vec::new();
    for (out_dir, threads) in [(&out_a, "1"), (&out_b, "4")] {
        for cmd in ["corpus", "train", "attack", "report"] {
            let run = exbench(&[
                "--config",
                cfg_a.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--threads",
                threads,
                cmd,
            ]);
            assert!(run.status.success(), "{cmd} --threads {threads}: {}", stderr(&run));
            if cmd == "attack" {
                summary.push(stdout(&run));
            }
        }
        for name in ["model.bin", "generations.jsonl", "metrics.json", "predictions.csv"] {
            assert!(out_dir.join(name).exists(), "missing {name}");
        }
    }
    assert_eq!(read_dir_bytes(&out_a), read_dir_bytes(&out_b));
    assert_eq!(summary[0], summary[1]);
    assert!(summary[0].starts_with("recall@10%FPR "), "{}", summary[0]);
    let ppl_line = stdout(&exbench(&[
        "--config",
        cfg_a.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
        "train",
    ]));
    assert!(ppl_line.contains("perplexity"), "{ppl_line}");
}

#[test]
fn game_prints_win_rates_and_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &out_dir, "");
    let out = exbench(&["--config", cfg.to_str().unwrap(), "game"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("constant adversary"));
    assert!(text.contains("loss_threshold adversary"));
    assert!(text.contains("win rate"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("game.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
}

#[test]
fn game_with_zero_trials_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("run"), "trials=0\n");
    let out = exbench(&["--config", cfg.to_str().unwrap(), "game"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("trial"));
}

#[test]
fn seed_override_changes_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg = write_config(tmp.path(), &out_a, "");
    let base = exbench(&["--config", cfg.to_str().unwrap(), "corpus"]);
    assert!(base.status.success());
    let reseeded = exbench(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "6",
        "corpus",
    ]);
    assert!(reseeded.status.success());
    assert_ne!(
        fs::read(out_a.join("corpus.txt")).unwrap(),
        fs::read(out_b.join("corpus.txt")).unwrap()
    );
}
