use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lstd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lstd")).args(args).output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn generate(dir: &Path, theta: &str, length: &str) {
    let out = lstd(&["generate", "--theta", theta, "--T", length, "--seed", "1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_exits_zero() {
    let out = lstd(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train-online"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = lstd(&["generate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_without_interventions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "0", "100");
    let ds = lstd_core::datagen::import_dataset(&d).unwrap();
    assert_eq!(ds.len(), 100);
    assert!(ds.mask.iter().all(|&m| !m));
    for f in ["data.csv", "ground_truth.csv", "config.txt"] {
        assert!(d.join(f).exists(), "{f}");
    }
}

#[test]
fn runtime_failure_is_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.csv");
    let out = lstd(&["train-online", "--data", missing.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1);
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"]["kind"], "io");
}

/// `head` is the subcommand plus its own flags; the shared training flags
/// are appended.
fn train(head: &[&str], data: &Path, out: &Path) -> Value {
    let mut args = head.to_vec();
    args.extend([
        "--data", data.to_str().unwrap(), "--lookback", "4", "--horizon", "6", "--width", "8",
        "--rounds", "20", "--mode", "feature", "--alpha", "0.3", "--beta", "0.5", "--gamma", "0.2",
        "--seed", "3", "--out", out.to_str().unwrap(),
    ]);
    let output = lstd(&args);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    read_json(&out.join("report.json"))
}

#[test]
fn ablating_interrupted_dependency_zeroes_only_gamma() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "0.05", "200");
    let base = train(&["train-online"], &d, &tmp.path().join("base"));
    let ablated = train(&["ablate", "--term", "Ls"], &d, &tmp.path().join("ls"));
    let (bw, aw) = (&base["config"]["weights"], &ablated["config"]["weights"]);
    assert_eq!(aw["gamma"], 0.0);
    assert_eq!(bw["gamma"], 0.2);
    assert_eq!(aw["alpha"], bw["alpha"]);
    assert_eq!(aw["beta"], bw["beta"]);
    assert_eq!(ablated["config"]["ablated_term"], "Ls");
    assert_eq!(ablated["config"]["command"], "ablate");
    assert_eq!(ablated["metrics"]["rounds"], 20);
}

#[test]
fn term_aliases_match_canonical_names() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "0.05", "100");
    let l2 = train(&["ablate", "--term", "L2"], &d, &tmp.path().join("l2"));
    assert_eq!(l2["config"]["ablated_term"], "Lm");
    assert_eq!(l2["config"]["weights"]["alpha"], 0.0);
    let kl = train(&["ablate", "--term", "KL"], &d, &tmp.path().join("kl"));
    assert_eq!(kl["config"]["weights"]["beta"], 0.0);
}

#[test]
fn train_evaluate_trace_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "0.1", "300");
    let run_dir = tmp.path().join("run");
    let report = train(&["train-online", "--plot"], &d, &run_dir);
    assert!(report["metrics"]["mse"].as_f64().unwrap().is_finite());
    assert!(report["baselines"]["persistence"]["mse"].is_number());
    assert!(run_dir.join("round_mse.svg").exists());
    let trace = fs::read_to_string(run_dir.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 20);
    for line in trace.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for k in ["round", "mse", "mae", "loss_breakdown", "wall_ms"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    let ckpt = run_dir.join("checkpoint.json");
    let eval_dir = tmp.path().join("eval");
    let out = lstd(&[
        "evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", d.to_str().unwrap(),
        "--max-windows", "60", "--out", eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = read_json(&eval_dir.join("report.json"));
    assert!(eval["identifiability"]["r2_within_long"].is_number());

    let trace_dir = tmp.path().join("trace");
    let out = lstd(&[
        "trace", "--checkpoint", ckpt.to_str().unwrap(), "--data", d.to_str().unwrap(),
        "--out", trace_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&trace_dir.join("report.json"));
    let n = summary["summary"]["windows"].as_u64().unwrap();
    let lines = fs::read_to_string(trace_dir.join("trace.jsonl")).unwrap().lines().count();
    assert_eq!(n as usize, lines);
    let csv = fs::read_to_string(trace_dir.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,grad_l1"));
    assert_eq!(csv.lines().count(), 1 + lines * 5);
}

#[test]
fn identical_runs_give_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    generate(&d, "0.05", "100");
    let strip = |mut v: Value| {
        v["config"]["out"] = Value::Null;
        v
    };
    let a = strip(train(&["train-online"], &d, &tmp.path().join("a")));
    let b = strip(train(&["train-online"], &d, &tmp.path().join("b")));
    assert_eq!(a, b);
    let text = fs::read_to_string(tmp.path().join("a/report.json")).unwrap();
    let pos: Vec<usize> = ["\"baselines\"", "\"config\"", "\"metrics\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "keys not sorted");
}

#[test]
fn csv_input_and_bad_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.csv");
    let mut text = String::from("date,a,b\n");
    for t in 0..40 {
        text.push_str(&format!("2020-01-{:02},{},{}\n", t % 28 + 1, (t as f64 * 0.3).sin(), t as f64 * 0.01));
    }
    fs::write(&good, &text).unwrap();
    let report = train(&["train-online"], &good, &tmp.path().join("run"));
    assert_eq!(report["config"]["data"]["csv"], good.to_str().unwrap());

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, text.replacen("2020-01-05,", "2020-01-05,nan,", 1)).unwrap();
    let out = lstd(&["train-online", "--data", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(v["error"]["kind"], "parse");
}
