use std::fs;
use std::path::Path;

use ggad::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, LOSS_LOG_FILE, MODEL_FILE};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ggad").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_help_lists_flags() {
    let (code, out, _) = call(&["train", "--help"]);
    assert_eq!(code, EXIT_OK);
    for flag in ["--alpha", "--s-ratio", "--outlier-strategy", "--no-ala", "--no-ec", "--batch-size", "--seed"] {
        assert!(out.contains(flag), "missing {flag}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let (code, _, err) = call(&["train", "--bogus", "1"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(!err.is_empty());
    let (code, _, _) = call(&["frobnicate"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn missing_dataset_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = call(&["split", "--data", p(&dir.path().join("nope")), "--out", p(&dir.path().join("s.json"))]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(out.starts_with("split config: {"));
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn gradcheck_seed_7_passes() {
    let (code, out, _) = call(&["gradcheck", "--seed", "7"]);
    assert_eq!(code, EXIT_OK, "{out}");
    let line = out.lines().find(|l| l.starts_with("max_rel_error=")).unwrap();
    let e: f64 = line.trim_start_matches("max_rel_error=").parse().unwrap();
    assert!(e < 1e-4);
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let split = dir.path().join("split.json");
    let run_dir = dir.path().join("run");
    let scores = dir.path().join("scores.csv");
    let metrics = dir.path().join("metrics.json");

    let (code, out, err) = call(&["synth", "--nodes", "300", "--seed", "3", "--out", p(&data)]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("synth config: {"));
    assert!(out.contains("anomalies=15"));

    let (code, _, err) = call(&["split", "--data", p(&data), "--seed", "3", "--out", p(&split)]);
    assert_eq!(code, EXIT_OK, "{err}");

    let (code, out, err) = call(&[
        "train", "--data", p(&data), "--split", p(&split), "--epochs", "15", "--hidden", "16", "--dim", "8", "--out",
        p(&run_dir),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("train config: {"));
    assert!(out.contains("\"alpha\":0.7"));
    let log = fs::read_to_string(run_dir.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,l_bce,l_ala,l_ec,l_total,tau_normal,tau_outlier");
    assert_eq!(log.lines().count(), 16);

    let (code, out, err) = call(&[
        "eval", "--data", p(&data), "--split", p(&split), "--model", p(&run_dir.join(MODEL_FILE)), "--scores-out",
        p(&scores), "--metrics-json", p(&metrics),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let line = out.lines().find(|l| l.starts_with("AUROC=")).unwrap();
    let parts: Vec<&str> = line.split(' ').collect();
    assert_eq!(parts.len(), 2);
    assert!(parts[1].starts_with("AUPRC="));

    let csv = fs::read_to_string(&scores).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node_id,score,label"));
    let body: Vec<&str> = lines.collect();
    let split_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&split).unwrap()).unwrap();
    assert_eq!(body.len(), split_json["test_nodes"].as_array().unwrap().len());
    for row in body {
        let score: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((1e-7 - 1e-15..=1.0 - 1e-7 + 1e-15).contains(&score));
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(m["auroc"].as_f64().unwrap() >= 0.0);
}

#[test]
fn invalid_config_reports_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let split = dir.path().join("split.json");
    assert_eq!(call(&["synth", "--nodes", "100", "--out", p(&data)]).0, EXIT_OK);
    assert_eq!(call(&["split", "--data", p(&data), "--out", p(&split)]).0, EXIT_OK);
    let (code, _, err) = call(&[
        "train", "--data", p(&data), "--split", p(&split), "--hidden", "0", "--out", p(&dir.path().join("r")),
    ]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(err.contains("error"));
}
