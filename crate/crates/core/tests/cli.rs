mod common;

use std::fs;
use std::path::{Path, PathBuf};

use discourse::classifier::Checkpoint;
use discourse::cli;
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("discourse").chain(args.iter().copied());
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_dir(stdout: &str) -> PathBuf {
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    PathBuf::from(line)
}

const SMALL: &[&str] = &[
    "--hidden", "12", "--heads", "3", "--grid-size", "3", "--image-channels", "8", "--epochs", "3", "--batch-size", "8",
    "--lr", "0.01",
];

/// Corpus of 30 posts with inline captions plus a split file.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = common::write_corpus(dir, 30, true);
    let split = dir.join("split.json");
    let (code, _, err) = run(&["split", "--dataset", s(&data), "--seed", "1", "--out", s(&split)]);
    assert_eq!(code, 0, "{err}");
    (data, split)
}

fn train(data: &Path, split: &Path, out: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--dataset", s(data), "--split", s(split), "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let (code, stdout, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    run_dir(&stdout)
}

#[test]
fn stats_prints_table_and_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_corpus(dir.path(), 12, false);
    let (code, out, _) = run(&["stats", "--dataset", s(&data), "--out", s(&dir.path().join("runs"))]);
    assert_eq!(code, 0);
    let num = out.lines().find(|l| l.starts_with("Num")).unwrap();
    let cols: Vec<&str> = num.split_whitespace().collect();
    assert_eq!(cols, ["Num", "12", "3", "3", "2", "2", "2"]);
    let rec: Value = serde_json::from_str(&fs::read_to_string(run_dir(&out).join("stats.json")).unwrap()).unwrap();
    assert_eq!(rec["total_count"], 12);
    assert!(run_dir(&out).join("histograms.tsv").exists());
}

#[test]
fn missing_dataset_is_a_user_error_naming_the_path() {
    let (code, _, err) = run(&["stats", "--dataset", "/no/such/posts.jsonl"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error:"));
    assert!(err.contains("/no/such/posts.jsonl"));
}

#[test]
fn malformed_dataset_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_corpus(dir.path(), 3, false);
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("{\"id\": \"x\", \"text\": \"hi\", \"image\": \"a.png\", \"label\": \"joke\"}\n");
    fs::write(&data, text).unwrap();
    let (code, _, err) = run(&["stats", "--dataset", s(&data)]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown label 'joke' at line 4"), "{err}");
}

#[test]
fn split_is_idempotent_and_needs_enough_posts() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_corpus(dir.path(), 20, false);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert_eq!(run(&["split", "--dataset", s(&data), "--seed", "1", "--out", s(&a)]).0, 0);
    assert_eq!(run(&["split", "--dataset", s(&data), "--seed", "1", "--out", s(&b)]).0, 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let small = tempfile::tempdir().unwrap();
    let data = common::write_corpus(small.path(), 5, false);
    let (code, _, err) = run(&["split", "--dataset", s(&data), "--out", s(&small.path().join("s.json"))]);
    assert_eq!(code, 2);
    assert!(err.contains("at least 10"), "{err}");
}

#[test]
fn validate_checks_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_corpus(dir.path(), 6, false);
    let (code, out, _) = run(&["validate", "--dataset", s(&data), "--quality"]);
    assert_eq!(code, 0);
    assert!(out.contains("ok: 6 posts"));
    fs::write(dir.path().join("images/p002.png"), b"not a png").unwrap();
    let (code, out, err) = run(&["validate", "--dataset", s(&data)]);
    assert_eq!(code, 2);
    assert!(out.contains("p002.png") && err.starts_with("error:"));
}

#[test]
fn config_precedence_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = run(&["config"]);
    assert_eq!(code, 0);
    for line in ["batch-size = 100", "lr = 0.00005", "heads = 6", "grid-size = 14", "text-cap = 20", "caption-cap = 20"] {
        assert!(out.lines().any(|l| l == line), "missing {line}");
    }
    let file = dir.path().join("run.cfg");
    fs::write(&file, "heads = 2\nhidden = 8\nfusion = concat\n").unwrap();
    let (_, out, _) = run(&["config", "--config", s(&file), "--heads", "4"]);
    assert!(out.contains("heads = 4\n"));
    assert!(out.contains("hidden = 8\n"));
    assert!(out.contains("fusion = concat\n"));
    let (code, _, err) = run(&["config", "--set", "nonsense=1"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown key 'nonsense'"));
    assert_eq!(run(&["config", "--fusion", "gated"]).0, 2);
    assert_eq!(run(&["train", "--bogus-flag"]).0, 2);
}

#[test]
fn train_writes_run_artifacts_and_echo_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let (data, split) = setup(dir.path());
    let out = dir.path().join("runs");
    let first = train(&data, &split, &out, &[]);
    for f in ["config.txt", "checkpoint/checkpoint.json", "train_log.jsonl", "report.json", "predictions.jsonl"] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(first.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let echo = first.join("config.txt");
    let mut args = vec!["train", "--dataset", s(&data), "--split", s(&split), "--out", s(&out), "--config", s(&echo)];
    let (code, stdout, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let second = run_dir(&stdout);
    assert_ne!(first, second);
    assert_eq!(fs::read(first.join("config.txt")).unwrap(), fs::read(second.join("config.txt")).unwrap());
    assert_eq!(fs::read(first.join("report.json")).unwrap(), fs::read(second.join("report.json")).unwrap());
    let a = Checkpoint::load(&first.join("checkpoint")).unwrap().model().unwrap();
    let b = Checkpoint::load(&second.join("checkpoint")).unwrap().model().unwrap();
    assert_eq!(a, b);

    args.extend(["--modalities", "text"]);
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn missing_captions_give_remediation_hint() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_corpus(dir.path(), 20, false);
    let split = dir.path().join("split.json");
    run(&["split", "--dataset", s(&data), "--out", s(&split)]);
    let out = dir.path().join("runs");
    let mut args = vec!["train", "--dataset", s(&data), "--split", s(&split), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    let (code, _, err) = run(&args);
    assert_eq!(code, 2);
    assert!(err.starts_with("error: captions file"), "{err}");
    assert!(err.contains("hint:") && err.contains("discourse caption"), "{err}");

    let (code, stdout, _) = run(&["caption", "--dataset", s(&data), "--caption-source", "stub:0"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("wrote 20 captions"));
    assert_eq!(run(&args).0, 0);
}

#[test]
fn eval_reports_six_columns_and_significance() {
    let dir = tempfile::tempdir().unwrap();
    let (data, split) = setup(dir.path());
    let out = dir.path().join("runs");
    let trained = train(&data, &split, &out, &[]);
    let ck = trained.join("checkpoint");
    let (code, stdout, err) = run(&["eval", "--checkpoint", s(&ck), "--dataset", s(&data), "--split", s(&split), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let eval_dir = run_dir(&stdout);
    let report: Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let keys = ["insertion", "concretization", "projection", "restatement", "extension", "weighted_f1"];
    for k in keys {
        assert!(report[k].is_f64(), "{k}");
    }
    // same test split, same model: identical to the training run's report
    assert_eq!(
        fs::read_to_string(eval_dir.join("report.json")).unwrap(),
        fs::read_to_string(trained.join("report.json")).unwrap()
    );

    let other = trained.join("predictions.jsonl");
    let (code, stdout, err) = run(&[
        "eval", "--checkpoint", s(&ck), "--dataset", s(&data), "--split", s(&split), "--out", s(&out),
        "--compare", s(&other), "--set", "significance-trials=1000",
    ]);
    assert_eq!(code, 0, "{err}");
    let report: Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&stdout).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["significance"]["p_value"], 1.0);

    let mut ckpt: Value = serde_json::from_str(&fs::read_to_string(ck.join("checkpoint.json")).unwrap()).unwrap();
    ckpt["labels"].as_array_mut().unwrap().swap(0, 1);
    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::write(bad.join("checkpoint.json"), ckpt.to_string()).unwrap();
    let (code, _, err) = run(&["eval", "--checkpoint", s(&bad), "--dataset", s(&data), "--split", s(&split), "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("label mapping"), "{err}");
}

#[test]
fn ablate_grids() {
    let dir = tempfile::tempdir().unwrap();
    let (data, split) = setup(dir.path());
    let out = dir.path().join("runs");
    for (grid, first) in [("modalities", "text/multihead/20"), ("length", "text,image,caption/multihead/5"), ("fusion", "text,image,caption/concat/20")] {
        let mut args = vec!["ablate", "--dataset", s(&data), "--split", s(&split), "--out", s(&out), "--grid", grid];
        args.extend_from_slice(SMALL);
        args.extend(["--epochs", "1"]);
        let (code, stdout, err) = run(&args);
        assert_eq!(code, 0, "{err}");
        let dir = run_dir(&stdout);
        let rows: Value = serde_json::from_str(&fs::read_to_string(dir.join("ablation.json")).unwrap()).unwrap();
        assert_eq!(rows.as_array().unwrap().len(), 4);
        let tsv = fs::read_to_string(dir.join("ablation.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), 5);
        assert!(tsv.lines().nth(1).unwrap().starts_with(first), "{tsv}");
    }
    assert_eq!(run(&["ablate", "--dataset", s(&data), "--split", s(&split), "--grid", "sizes"]).0, 2);
}

#[test]
fn visualize_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let (data, split) = setup(dir.path());
    let out = dir.path().join("runs");
    let trained = train(&data, &split, &out, &["--heads", "6", "--grid-size", "14", "--epochs", "1"]);
    let ck = trained.join("checkpoint");
    let (code, stdout, err) = run(&[
        "visualize", "--checkpoint", s(&ck), "--dataset", s(&data), "--post", "p004", "--out", s(&out), "--per-head",
    ]);
    assert_eq!(code, 0, "{err}");
    let files: Vec<&str> = stdout.lines().collect();
    assert_eq!(files.len(), 8);
    assert_eq!(files.iter().filter(|f| f.contains("_head")).count(), 6);
    let grid = fs::read_to_string(files[6]).unwrap();
    assert_eq!(grid.lines().count(), 14);
    assert!(grid.lines().all(|l| l.split_whitespace().count() == 14));

    let (code, _, err) = run(&["visualize", "--checkpoint", s(&ck), "--dataset", s(&data), "--post", "nope", "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("nope"));

    let concat = train(&data, &split, &out, &["--fusion", "concat", "--epochs", "1"]);
    let (code, _, err) = run(&[
        "visualize", "--checkpoint", s(&concat.join("checkpoint")), "--dataset", s(&data), "--post", "p004", "--out", s(&out),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("no attention weights"), "{err}");
}
