use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[model]
layers = 1
hidden = 16
heads = 2
ffn = 32
proj = 8
adapter = 4
bpe_vocab = 300
wp_vocab = 300
max_len = 32

[pretrain]
epochs = 1
batch_size = 8
lr = 0.001

[finetune]
epochs = 2
batch_size = 8
lr = 0.001
unfreeze = true

[synth]
docs_per_class = 3
";

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthoroberta"))
        .current_dir(dir)
        .env_remove("ORTHOROBERTA_DATA_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.conf"), TINY).unwrap();
    ok(d, &["--config", "tiny.conf", "synth", "--output", "docs.tsv"]);
    ok(d, &["--config", "tiny.conf", "train-tokenizers", "--input", "docs.tsv", "--out", "tok"]);
    ok(d, &["--config", "tiny.conf", "pretrain", "--input", "docs.tsv", "--tokenizers", "tok", "--out", "pre"]);
    dir
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = prepared();
    let d = dir.path();
    assert!(d.join("docs.tsv.run-manifest.conf").is_file());
    assert!(d.join("pre/final/manifest.txt").is_file());
    assert!(d.join("pre/epoch-1/manifest.txt").is_file());

    ok(d, &["--config", "tiny.conf", "finetune", "--input", "docs.tsv", "--checkpoint", "pre/final", "--out", "ft"]);
    assert!(d.join("ft/best/manifest.txt").is_file());
    let header = fs::read_to_string(d.join("ft/metrics.csv")).unwrap();
    assert!(header.starts_with("stage,epoch,split,loss"));

    let summary = ok(d, &["--config", "tiny.conf", "evaluate", "--input", "docs.tsv", "--checkpoint", "ft/best", "--out", "ev"]);
    assert!(summary.starts_with("accuracy"));
    for f in ["metrics.csv", "predictions.csv", "confusion-ckb.csv", "confusion-ur.svg", "run-manifest.conf"] {
        assert!(d.join("ev").join(f).is_file(), "{f}");
    }

    let line = ok(d, &["classify", "--checkpoint", "ft/best", "آپ کیسے ہیں ٹھیک"]);
    let cols: Vec<&str> = line.trim().split('\t').collect();
    assert_eq!(cols[0], "ur");
    let probs: Vec<f64> = cols[3].split(' ').map(|p| p.parse().unwrap()).collect();
    assert_eq!(probs.len(), 4);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    ok(d, &["report", "--input", "ev", "--out", "rep"]);
    let s = fs::read_to_string(d.join("rep/summary.csv")).unwrap();
    assert_eq!(s.lines().count(), 5);
    assert!(d.join("rep/confusion-ar.svg").is_file());
}

#[test]
fn scratch_finetune_needs_tokenizers_or_checkpoint() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["--config", "tiny.conf", "finetune", "--input", "docs.tsv", "--tokenizers", "tok", "--out", "ft"]);
    let out = bin(d, &["--config", "tiny.conf", "finetune", "--input", "docs.tsv", "--out", "ft2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = prepared();
    let d = dir.path();
    let ascii = bin(d, &["classify", "--checkpoint", "pre/final", "hello world"]);
    assert_eq!(ascii.status.code(), Some(5));

    let missing = bin(d, &["classify", "--checkpoint", "nowhere", "سڵاو"]);
    assert_eq!(missing.status.code(), Some(4));

    fs::write(d.join("bad.conf"), "[model]\ndepth = 3\n").unwrap();
    let bad = bin(d, &["--config", "bad.conf", "synth", "--output", "x.tsv"]);
    assert_eq!(bad.status.code(), Some(3));
    let bad_flag = bin(d, &["--set", "pretrain.nope=1", "synth", "--output", "x.tsv"]);
    assert_eq!(bad_flag.status.code(), Some(3));

    assert_eq!(bin(d, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn clean_normalizes_and_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Arabic yeh and kaf in Kurdish text, plus markup
    fs::write(d.join("raw.tsv"), "1\tckb\t<b>كوردي</b>\nسڵاو\n").unwrap();
    ok(d, &["clean", "--input", "raw.tsv", "--output", "clean.tsv"]);
    let out = fs::read_to_string(d.join("clean.tsv")).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "1\tckb\tکوردی");
    assert!(lines[1].starts_with("-\tckb\t"));
}

#[test]
fn data_dir_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_orthoroberta"))
        .current_dir(elsewhere.path())
        .env("ORTHOROBERTA_DATA_DIR", dir.path())
        .args(["--set", "synth.docs_per_class=1", "synth", "--output", "s.tsv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("s.tsv").is_file());
    assert!(!elsewhere.path().join("s.tsv").exists());
}

#[test]
fn rerunning_from_a_manifest_is_byte_identical() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["--config", "pre/run-manifest.conf", "pretrain", "--input", "docs.tsv", "--tokenizers", "tok", "--out", "pre2"]);
    for f in ["final/manifest.txt", "final/tensors/emb.bpe.f64", "metrics.csv", "run-manifest.conf"] {
        assert_eq!(fs::read(d.join("pre").join(f)).unwrap(), fs::read(d.join("pre2").join(f)).unwrap(), "{f}");
    }
}
