use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spatialgen"));
    c.env_remove("SPATIALGEN_CONFIG");
    c
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/coco_mini.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

/// Runs ingest → filter-natural → split → gen-captions → mock-detect → evaluate → report in `dir`.
fn pipeline(dir: &Path) {
    let fx = fixture();
    let fx = fx.to_str().unwrap();
    ok(&["ingest", "--annotations", fx, "--out", &p(dir, "snap.jsonl")]);
    ok(&["filter-natural", "--annotations", &p(dir, "snap.jsonl"), "--out", &p(dir, "natural.jsonl")]);
    ok(&["split", "--mode", "main", "--natural", &p(dir, "natural.jsonl"), "--val-size", "10", "--seed", "4", "--out", &p(dir, "split.json")]);
    ok(&["gen-captions", "--split", &p(dir, "split.json"), "--limit", "30", "--seed", "2", "--out", &p(dir, "captions.jsonl")]);
    ok(&["mock-detect", "--captions", &p(dir, "captions.jsonl"), "--seed", "5", "--out", &p(dir, "det.jsonl")]);
    ok(&["evaluate", "--captions", &p(dir, "captions.jsonl"), "--detections", &p(dir, "det.jsonl"), "--out", &p(dir, "eval.json")]);
    ok(&["report", "--eval", &p(dir, "eval.json"), "--freq", &p(dir, "natural.jsonl"), "--out", &p(dir, "report")]);
    ok(&["sample", "--annotations", &p(dir, "snap.jsonl"), "--n", "50", "--seed", "3", "--out", &p(dir, "train.jsonl")]);
    ok(&["scan-corpus", "--input", &p(dir, "captions.jsonl"), "--out", &p(dir, "corpus.json")]);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let first: Vec<(String, Vec<u8>)> = artifacts(dir.path());
    pipeline(dir.path());
    assert_eq!(first, artifacts(dir.path()));
    assert!(first.len() >= 12);
    // no temp files left behind
    assert!(files_in(dir.path()).iter().all(|f| !f.contains(".tmp")));
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for name in files_in(dir) {
        let path = dir.join(&name);
        if path.is_dir() {
            for (sub, bytes) in artifacts(&path) {
                out.push((format!("{name}/{sub}"), bytes));
            }
        } else {
            out.push((name, std::fs::read(path).unwrap()));
        }
    }
    out
}

#[test]
fn every_artifact_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    for (name, bytes) in artifacts(dir.path()) {
        let text = String::from_utf8(bytes).unwrap();
        let first = text.lines().next().unwrap_or_default();
        let has = if name.ends_with(".csv") {
            first.starts_with("# provenance: ")
        } else if name.ends_with(".jsonl") {
            first.starts_with("{\"provenance\":")
        } else if name.ends_with(".json") {
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            v["provenance"]["config_digest"].is_string()
        } else {
            // aligned-text table
            true
        };
        assert!(has, "{name} lacks a provenance header");
    }
}

#[test]
fn universe_has_one_record_per_triplet() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["build-universe", "--vocab", "coco80", "--out", &p(dir.path(), "u.jsonl")]);
    let text = std::fs::read_to_string(dir.path().join("u.jsonl")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("{\"provenance\""));
    assert_eq!(lines.count(), 88_480);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["build-universe", "--bogus", "--out", "x"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(
        run(&["evaluate", "--captions", "missing.jsonl", "--detections", "missing.jsonl", "--out", &p(dir.path(), "e.json")])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["evaluate", "--captions", "a", "--detections", "b", "--threshold", "2", "--out", "x"]).status.code(),
        Some(1)
    );
    std::fs::write(dir.path().join("bad.json"), "{not json").unwrap();
    let out = run(&["ingest", "--annotations", &p(dir.path(), "bad.json"), "--out", &p(dir.path(), "s.jsonl")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(files_in(dir.path()) == vec!["bad.json".to_string()]);
}

#[test]
fn mismatched_detections_name_captions() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let det = std::fs::read_to_string(dir.path().join("det.jsonl")).unwrap();
    // drop every line of the first caption
    let kept: Vec<&str> = det.lines().filter(|l| !l.contains("\"test-00000\"")).collect();
    std::fs::write(dir.path().join("short.jsonl"), kept.join("\n")).unwrap();
    let out = run(&[
        "evaluate",
        "--captions",
        &p(dir.path(), "captions.jsonl"),
        "--detections",
        &p(dir.path(), "short.jsonl"),
        "--out",
        &p(dir.path(), "bad_eval.json"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test-00000"));
    assert!(!dir.path().join("bad_eval.json").exists());
}

#[test]
fn config_digest_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(&["--config-digest", "build-universe", "--out", "u.jsonl"]);
    let b = ok(&["--config-digest", "build-universe", "--vocab", "coco80", "--out", "other.jsonl"]);
    assert_eq!(a, b);
    assert_eq!(a.trim().len(), 64);
    assert!(!Path::new("u.jsonl").exists());

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"eval": {"threshold": 0.3}}"#).unwrap();
    let args = ["--config-digest", "evaluate", "--captions", "c", "--detections", "d", "--out", "e"];
    let plain = ok(&args);
    let out = bin().args(args).env("SPATIALGEN_CONFIG", &cfg).output().unwrap();
    assert!(out.status.success());
    assert_ne!(plain, String::from_utf8(out.stdout).unwrap());
    let flagged = ok(&["--config-digest", "evaluate", "--captions", "c", "--detections", "d", "--threshold", "0.3", "--out", "e"]);
    let out = bin().args(args).env("SPATIALGEN_CONFIG", &cfg).output().unwrap();
    assert_eq!(flagged, String::from_utf8(out.stdout).unwrap());

    std::fs::write(&cfg, r#"{"eval": {"treshold": 0.3}}"#).unwrap();
    let out = bin().args(args).env("SPATIALGEN_CONFIG", &cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unseen_split_and_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    ok(&["filter-natural", "--annotations", fx.to_str().unwrap(), "--out", &p(dir.path(), "natural.jsonl")]);
    let summary = ok(&["split", "--mode", "unseen", "--natural", &p(dir.path(), "natural.jsonl"), "--val-size", "0", "--out", &p(dir.path(), "unseen.json")]);
    let v: serde_json::Value = serde_json::from_str(summary.trim()).unwrap();
    assert!(v["test_triplets"].as_u64().is_some());
    ok(&[
        "sample",
        "--annotations",
        fx.to_str().unwrap(),
        "--split",
        "unseen",
        "--manifest",
        &p(dir.path(), "unseen.json"),
        "--n",
        "20",
        "--out",
        &p(dir.path(), "train.jsonl"),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("unseen.json")).unwrap()).unwrap();
    let train: Vec<&str> = manifest["train_objects"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_str().unwrap())
        .collect();
    let text = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    for line in text.lines().skip(1) {
        let s: serde_json::Value = serde_json::from_str(line).unwrap();
        for t in s["triplets"].as_array().unwrap() {
            assert!(train.contains(&t["subject"].as_str().unwrap()));
            assert!(train.contains(&t["object"].as_str().unwrap()));
        }
    }
}
