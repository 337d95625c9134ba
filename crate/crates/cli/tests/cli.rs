use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_has-qoe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// simulate -> train on a small dataset; returns (dataset dir, model path).
fn small_setup(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let model = root.join("model.json");
    ok(&["simulate", "--contents", "5", "--sessions-per-content", "2", "--segments", "6", "--seed", "3", "--out", p(&data)]);
    ok(&["train", "--dataset", p(&data.join("index.json")), "--config", p(&data.join("config.json")), "--out", p(&model)]);
    (data, model)
}

#[test]
fn simulate_train_assess() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_setup(dir.path());
    let manifest = data.join("session000/manifest.json");
    let scores = dir.path().join("scores.csv");
    let out = ok(&["assess", "--manifest", p(&manifest), "--model", p(&model), "--out", p(&scores)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config_sha256="));

    let text = fs::read_to_string(&scores).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,qoe");
    assert_eq!(lines.len(), 7);
    let ts: Vec<usize> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ts, (1..=6).collect::<Vec<_>>());
    assert!(dir.path().join("scores.timing.csv").exists());

    let again = dir.path().join("again.csv");
    ok(&["assess", "--manifest", p(&manifest), "--model", p(&model), "--out", p(&again)]);
    assert_eq!(fs::read(&scores).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn deadline_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = small_setup(dir.path());
    let out = run(&[
        "assess",
        "--manifest", p(&data.join("session001/manifest.json")),
        "--model", p(&model),
        "--realtime",
        "--debug-delay-ms", "2500",
        "--out", p(&dir.path().join("s.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("deadline exceeded at segment 1"));
}

#[test]
fn data_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("index.json");
    fs::write(&empty, r#"{"sessions": []}"#).unwrap();
    let out = run(&["train", "--dataset", p(&empty), "--out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let missing = run(&["assess", "--manifest", "/nonexistent/m.json", "--model", "/nonexistent/x.json", "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(missing.status.code(), Some(2));

    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--dataset", "x", "--out", "y", "--reps", "0"]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--dataset", "x", "--out", "y", "--drop-group", "colour"]).status.code(), Some(1));
}

#[test]
fn eval_is_deterministic_and_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--contents", "5", "--sessions-per-content", "3", "--segments", "6", "--seed", "3", "--out", p(&data)]);
    let index = data.join("index.json");
    let config = data.join("config.json");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        ok(&["eval", "--dataset", p(&index), "--config", p(&config), "--reps", "5", "--seed", "2", "--drop-group", "texture", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    let report: Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(report["repetitions"], 5);
    assert_eq!(report["dropped_groups"][0], "texture");
    let timing: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.timing.json")).unwrap()).unwrap();
    assert!(timing["time_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn calibrate_weights_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("halves.csv");
    fs::write(
        &input,
        "session_id,q_start,q_end,mos\na,1,5,10\nb,3,2,20\nc,2,6,30\nd,5,7,40\ne,4,9,50\n",
    )
    .unwrap();
    let out = dir.path().join("weights.json");
    ok(&["calibrate-weights", "--in", p(&input), "--out", p(&out)]);
    let w: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    // end-half scores track the ratings better than start-half ones
    assert!(w["w_e"].as_f64().unwrap() > w["w_s"].as_f64().unwrap());

    fs::write(&input, "session_id,q_start,q_end,mos\na,1,2,3\n").unwrap();
    assert_eq!(run(&["calibrate-weights", "--in", p(&input), "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn eval_rejects_test_splits_too_small_to_score() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = small_setup(dir.path());
    let out = run(&["eval", "--dataset", p(&data.join("index.json")), "--reps", "2", "--out", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test split holds 2 sessions"));
}

#[test]
fn synthetic_study_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.json");
    ok(&["simulate", "--contents", "8", "--sessions-per-content", "6", "--seed", "7", "--out", p(&data)]);
    let index = data.join("index.json");
    let config = data.join("config.json");
    ok(&["train", "--dataset", p(&index), "--config", p(&config), "--out", p(&model)]);
    ok(&["eval", "--dataset", p(&index), "--config", p(&config), "--reps", "100", "--seed", "7", "--out", p(&report)]);
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let srocc = r["srocc"]["mean"].as_f64().unwrap();
    assert!(srocc >= 0.85, "SRoCC {srocc}");
}
