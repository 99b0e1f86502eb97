use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dcl3d(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcl3d"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = dcl3d(out, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--seed", "3", "--threads", "1"];

fn small_data(out: &Path) {
    ok(out, &[&["synth", "--videos-per-class", "8", "--train-per-class", "5"], SMALL].concat());
}

fn short_train(stream: &str) -> Vec<&str> {
    [&["train", "--stream", stream, "--iters", "4", "--batch", "4"], SMALL].concat()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dcl3d(dir.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(dcl3d(dir.path(), &["train", "--no-such-flag"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.config");
    fs::write(&cfg, "colour = red\n").unwrap();
    let o = dcl3d(dir.path(), &["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn contract_violations_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcl3d(dir.path(), &["train", "--stream", "ir"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(dcl3d(dir.path(), &["gradcheck", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(dcl3d(dir.path(), &["fuse", "--method", "late9"]).status.code(), Some(1));
    small_data(dir.path());
    assert_eq!(dcl3d(dir.path(), &["train", "--lr=-1", "--iters", "1"]).status.code(), Some(1));
}

#[test]
fn gradcheck_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gradcheck", "--profile", "tiny", "--seed", "7"]);
    let report = fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    assert!(report.contains("code.weight"));
    assert!(report.contains("features"));
    let dump = fs::read_to_string(dir.path().join("gradcheck.config")).unwrap();
    assert!(dump.contains("seed = 7"));
}

#[test]
fn training_is_reproducible_from_seed_and_config_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    small_data(out);
    let args = [short_train("ir"), vec!["--alpha", "0"]].concat();
    ok(out, &args);
    let first = fs::read(out.join("ir/loss.csv")).unwrap();
    let ckpt = fs::read(out.join("ir/checkpoint.ckpt")).unwrap();
    ok(out, &args);
    assert_eq!(first, fs::read(out.join("ir/loss.csv")).unwrap());

    let dump = out.join("dump.config");
    fs::copy(out.join("train.config"), &dump).unwrap();
    let again = dir.path().join("again");
    ok(&again, &["train", "--config", dump.to_str().unwrap(), "--data", out.join("data").to_str().unwrap()]);
    assert_eq!(first, fs::read(again.join("ir/loss.csv")).unwrap());
    assert_eq!(ckpt, fs::read(again.join("ir/checkpoint.ckpt")).unwrap());
    let csv = String::from_utf8(first).unwrap();
    assert!(csv.starts_with("iteration,L,L_c,L_d\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn two_stream_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    small_data(out);
    ok(out, &["flow", "--ppm", "true"]);
    assert!(out.join("flow/train/manifest.txt").exists());
    assert!(out.join("flow/ppm/test").read_dir().unwrap().next().is_some());
    for stream in ["ir", "flow"] {
        ok(out, &short_train(stream));
        ok(out, &["eval", "--stream", stream, "--knn-k", "3"]);
        let m = json(&out.join(stream).join("metrics.json"));
        for name in ["softmax", "knn", "knn_probs"] {
            assert_eq!(m[name]["samples"], 18, "{stream} {name}");
            assert!(out.join(stream).join(format!("confusion_{name}.csv")).exists());
        }
        assert!(out.join(stream).join("codes.pgm").exists());
        let rows = fs::read_to_string(out.join(stream).join("predictions.jsonl")).unwrap();
        assert_eq!(rows.lines().count(), 48);
    }

    ok(out, &["fuse", "--method", "late2", "--w-ir", "0", "--knn-k", "3"]);
    let fused = json(&out.join("fuse_late2/metrics.json"));
    assert_eq!(fused, json(&out.join("flow/metrics.json"))["knn_probs"]);
    ok(out, &["fuse", "--method", "late1", "--w-flow", "0"]);
    assert_eq!(json(&out.join("fuse_late1/metrics.json")), json(&out.join("ir/metrics.json"))["softmax"]);
    ok(out, &["fuse", "--method", "nn2", "--iters", "5", "--hidden", "8"]);
    assert!(out.join("fuse_nn2/confusion.csv").exists());

    ok(out, &["viz", "--stream", "ir", "--neuron", "2", "--steps", "3"]);
    let csv = fs::read_to_string(out.join("neuron_2/activations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(out.join("neuron_2/frame_7.ppm").exists());
    let o = dcl3d(out, &["viz", "--neuron", "100000"]);
    assert_eq!(o.status.code(), Some(1));
}
