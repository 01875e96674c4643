use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aquasentinel"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_writes_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--out", "o", "--seed", "3", "simulate", "--steps", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/timeseries.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,node_id,flow_m3s,depth_m,pressure_m"));
    assert_eq!(lines.count(), 5 * 23);
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "steps = \"many\"\n").unwrap();
    let out = run(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir.path(), &["--config", "missing.toml", "evaluate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn small_evaluation_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("small.toml"),
        "controls = 1\n[scenarios]\nconduits = [\"C05\"]\nkinds = [\"constant_gt25\"]\n",
    )
    .unwrap();
    let out = run(dir.path(), &["--config", "small.toml", "--out", "res", "evaluate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cases = std::fs::read_to_string(dir.path().join("res/cases.csv")).unwrap();
    assert_eq!(cases.lines().count(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["overall"]["detected"], 1);
    assert_eq!(summary["failed_cases"], 0);
}

#[test]
fn failing_cases_exit_with_runtime_code() {
    // A seasonal period longer than the history leaves no usable expert.
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("broken.toml"),
        "controls = 1\n[forecast]\nexperts = [\"seasonal_naive\"]\n[demand]\nperiod = 5000\n\
         [scenarios]\nconduits = [\"C05\"]\nkinds = [\"constant_gt25\"]\n",
    )
    .unwrap();
    let out = run(dir.path(), &["--config", "broken.toml", "--out", "res", "evaluate"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("res/cases.csv").exists());
}
