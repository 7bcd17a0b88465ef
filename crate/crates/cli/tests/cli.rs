use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tabletext::eval::{DecodeConfig, NeuralGenerator};
use tabletext::synthetic;
use tabletext::table::load_jsonl;
use tabletext::train::load_checkpoint;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabletext"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_corpus(dir: &Path, name: &str, n: usize, schemas: usize, seed: u64) -> PathBuf {
    let corpus = synthetic::generate_with(n, schemas, seed, schemas > 1).unwrap().instances;
    let text: String = corpus
        .iter()
        .map(|i| serde_json::to_string(&i.to_record()).unwrap() + "\n")
        .collect();
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Trains a tiny model; returns the checkpoint path.
fn tiny_checkpoint(dir: &Path, train: &Path, extra: &[&str]) -> PathBuf {
    let ckpt = dir.join("model.ckpt");
    let mut args = vec![
        "train", "--train", p(train), "--output", p(&ckpt), "--epochs", "2", "--word-dim", "6", "--attr-dim", "6",
        "--hidden-dim", "8", "--seed", "3", "--quiet",
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ckpt
}

#[test]
fn convert_writes_one_record_per_triple() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("facts.tsv");
    let output = dir.path().join("facts.jsonl");
    fs::write(&input, "Paris\tcapital of\tFrance\twhat is paris the capital of ?\n").unwrap();
    let out = run(&["convert", "--format", "triples-tsv", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&output).unwrap();
    assert_eq!(text.lines().count(), 1);
    let record: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(record["attributes"], serde_json::json!(["subject", "capital of"]));
    assert_eq!(record["cells"], serde_json::json!(["Paris", "France"]));
}

#[test]
fn convert_accepts_an_empty_file() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.tsv");
    let output = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let out = run(&["convert", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(&output).unwrap(), "");
}

#[test]
fn convert_reports_the_malformed_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.tsv");
    let output = dir.path().join("bad.jsonl");
    fs::write(&input, "a\tb\tc\tq one\nd\te\tf\tq two\ng\th\tq three\n").unwrap();
    let out = run(&["convert", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert!(!output.exists(), "no partial output");
}

#[test]
fn train_records_flags_and_reproduces_its_log() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 6, 3, 1);
    let ckpt = tiny_checkpoint(dir.path(), &train, &["--no-copy"]);
    let loaded = load_checkpoint(&ckpt).unwrap();
    assert!(!loaded.model.flags().copy);
    assert_eq!(loaded.train.unwrap().max_epochs, 2);
    let log = fs::read_to_string(format!("{}.log.jsonl", ckpt.display())).unwrap();
    assert_eq!(log.lines().count(), 2);

    let again = TempDir::new().unwrap();
    let ckpt2 = tiny_checkpoint(again.path(), &train, &["--no-copy"]);
    let log2 = fs::read_to_string(format!("{}.log.jsonl", ckpt2.display())).unwrap();
    assert_eq!(log, log2);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());
}

#[test]
fn command_line_flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 4, 2, 2);
    let config = dir.path().join("run.conf");
    fs::write(&config, "# tiny\nhidden_dim = 7\nseed = 11\nplusplus = true\n").unwrap();
    let ckpt = tiny_checkpoint(dir.path(), &train, &["--config", p(&config)]);
    let loaded = load_checkpoint(&ckpt).unwrap();
    let cfg = loaded.train.unwrap();
    assert_eq!(cfg.model.hidden_dim, 8);
    assert_eq!(cfg.seed, 3);
    assert!(cfg.model.flags.plusplus);
}

#[test]
fn invalid_settings_exit_with_validation_status() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 4, 2, 2);
    let ckpt = dir.path().join("m.ckpt");
    let out = run(&["train", "--train", p(&train), "--output", p(&ckpt), "--patience", "0"]);
    assert_eq!(code(&out), 1);
    assert!(!ckpt.exists());
    let missing = dir.path().join("nope.jsonl");
    assert_eq!(code(&run(&["train", "--train", p(&missing), "--output", p(&ckpt)])), 1);
    assert_eq!(code(&run(&["train", "--bogus"])), 1);
}

#[test]
fn generate_emits_one_line_per_row_and_matches_greedy_decoding() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 6, 3, 4);
    let test = write_corpus(dir.path(), "test.jsonl", 5, 3, 5);
    let ckpt = tiny_checkpoint(dir.path(), &train, &[]);
    let output = dir.path().join("out.txt");
    let attention = dir.path().join("attention");
    let out = run(&[
        "generate", "--checkpoint", p(&ckpt), "--input", p(&test), "--output", p(&output), "--beam", "1",
        "--max-len", "10", "--dump-attention", p(&attention),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = fs::read_to_string(&output).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(fs::read_dir(&attention).unwrap().count(), 5);

    let model = load_checkpoint(&ckpt).unwrap().model;
    let greedy = NeuralGenerator::new(&model, DecodeConfig { beam: 1, max_len: 10 });
    for (inst, line) in load_jsonl(&test).unwrap().iter().zip(&lines) {
        assert_eq!(greedy.decode_row(inst).unwrap().tokens.join(" "), *line);
    }
}

#[test]
fn template_baseline_reports_perfect_bleu_on_a_single_template_corpus() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 20, 1, 6);
    let test = write_corpus(dir.path(), "test.jsonl", 8, 1, 7);
    let report = dir.path().join("report.json");
    let out = run(&[
        "evaluate", "--baseline", "template", "--train", p(&train), "--test", p(&test), "--output", p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["bleu"], 1.0);
    assert_eq!(r["size"], 8);
    assert_eq!(r["fallback_count"], 0);
    let buckets = r["buckets"].as_array().unwrap();
    let labels: Vec<&str> = buckets.iter().map(|b| b["unseen"].as_str().unwrap()).collect();
    assert_eq!(labels, ["0", "1", "2", ">=3"]);
    let total: u64 = buckets.iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(total, 8);
}

#[test]
fn neural_and_random_copy_evaluation() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 6, 3, 8);
    let test = write_corpus(dir.path(), "test.jsonl", 4, 3, 9);
    let ckpt = tiny_checkpoint(dir.path(), &train, &["--no-copy"]);
    let report = dir.path().join("report.json");
    let preds = dir.path().join("preds.txt");
    for baseline in [None, Some("random-copy")] {
        let mut args = vec![
            "evaluate", "--checkpoint", p(&ckpt), "--test", p(&test), "--output", p(&report), "--predictions",
            p(&preds), "--max-len", "8", "--sentence-bleu",
        ];
        if let Some(b) = baseline {
            args.extend(["--baseline", b]);
        }
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r["size"], 4);
        assert!(r["sentence_bleu_mean"].is_number());
        assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 4);
    }
}

#[test]
fn mismatched_baselines_fail_without_output() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 4, 2, 10);
    let ckpt = tiny_checkpoint(dir.path(), &train, &[]);
    let report = dir.path().join("report.json");
    for baseline in ["tc-nlm", "random-copy"] {
        let out = run(&[
            "evaluate", "--baseline", baseline, "--checkpoint", p(&ckpt), "--test", p(&train), "--output", p(&report),
        ]);
        assert_eq!(code(&out), 1, "{baseline}");
        assert!(!report.exists());
    }
    let out = run(&["evaluate", "--baseline", "template", "--test", p(&train), "--output", p(&report)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn tc_nlm_training_feeds_the_tc_nlm_baseline() {
    let dir = TempDir::new().unwrap();
    let train = write_corpus(dir.path(), "train.jsonl", 4, 2, 12);
    let ckpt = tiny_checkpoint(dir.path(), &train, &["--tc-nlm"]);
    let out = run(&["evaluate", "--baseline", "tc-nlm", "--checkpoint", p(&ckpt), "--test", p(&train), "--max-len", "6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["size"], 4);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = TempDir::new().unwrap();
    let test = write_corpus(dir.path(), "test.jsonl", 2, 1, 13);
    let ckpt = dir.path().join("junk.ckpt");
    fs::write(&ckpt, b"not a checkpoint at all").unwrap();
    let out = run(&["generate", "--checkpoint", p(&ckpt), "--input", p(&test)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn stats_summarize_the_corpus() {
    let dir = TempDir::new().unwrap();
    let corpus = write_corpus(dir.path(), "c.jsonl", 5, 2, 14);
    let out = run(&["stats", "--input", p(&corpus)]);
    assert_eq!(code(&out), 0);
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["sentences"], 5);
    assert!(s["words_per_sentence"]["avg"].as_f64().unwrap() > 0.0);
}
