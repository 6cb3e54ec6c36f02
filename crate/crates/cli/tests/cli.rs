//! End-to-end tests of the `babsim` binary: run, check, export-dot and
//! fixtures, including the exit-code contract (0 ok, 1 property violation,
//! 2 config/IO error).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn babsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_babsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("babsim-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config(dir: &Path, closure_mode: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{
  "processes": 6,
  "rounds": 300,
  "mining_probability": 0.05,
  "block_capacity": 8,
  "confirmation_depth": 4,
  "tx_rate": 1,
  "base_protocol": "nakamoto",
  "closure_mode": "{closure_mode}",
  "adversary": {{"name": "honest"}},
  "seeds": {{"start": 1, "count": 2}}
}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_produces_traces_and_reports() {
    let dir = scratch("run");
    let config = small_config(&dir, "closure");
    let out = babsim(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "trace_honest_closure_1.jsonl",
        "trace_honest_base_1.jsonl",
        "trace_honest_closure_2.jsonl",
        "report.csv",
        "summary.json",
    ] {
        assert!(dir.join(file).exists(), "missing {file}");
    }
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    // Header plus two rows (base + closure) per seed.
    assert_eq!(csv.lines().count(), 1 + 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["paired"]["latency_violations"], 0);

    // The emitted traces pass the property checker.
    let check = babsim(&[
        "check",
        dir.join("trace_honest_closure_1.jsonl").to_str().unwrap(),
        dir.join("trace_honest_base_1.jsonl").to_str().unwrap(),
    ]);
    assert!(check.status.success());
    let stdout = String::from_utf8_lossy(&check.stdout);
    assert_eq!(stdout.matches("PASS").count(), 12);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir_a = scratch("det-a");
    let dir_b = scratch("det-b");
    let config = small_config(&dir_a, "closure");
    for dir in [&dir_a, &dir_b] {
        let out = babsim(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for file in ["trace_honest_closure_1.jsonl", "trace_honest_base_2.jsonl"] {
        let a = fs::read(dir_a.join(file)).unwrap();
        let b = fs::read(dir_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
}

#[test]
fn seed_and_closure_overrides_apply() {
    let dir = scratch("override");
    let config = small_config(&dir, "closure");
    let out = babsim(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--seeds",
        "7..8",
        "--closure",
        "greedy",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(dir.join("trace_honest_greedy_7.jsonl").exists());
    assert!(dir.join("trace_honest_greedy_8.jsonl").exists());
}

#[test]
fn tampered_trace_fails_check_with_exit_one() {
    let dir = scratch("tamper");
    let config = small_config(&dir, "off");
    let out = babsim(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let path = dir.join("trace_honest_base_1.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    let deliver = text
        .lines()
        .find(|l| l.contains("\"ev\":\"deliver\""))
        .expect("trace has deliveries")
        .to_string();
    text.push_str(&deliver);
    text.push('\n');
    let tampered = dir.join("tampered.jsonl");
    fs::write(&tampered, text).unwrap();

    let check = babsim(&["check", tampered.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&check.stdout);
    assert!(stdout.contains("FAIL no_duplication"), "{stdout}");
}

#[test]
fn invalid_config_exits_two() {
    let dir = scratch("badcfg");
    let path = dir.join("config.json");
    fs::write(&path, r#"{"processes": 0}"#).unwrap();
    let out = babsim(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_dot_renders_and_validates_round() {
    let dir = scratch("dot");
    let fixtures = babsim(&["fixtures", "--out", dir.to_str().unwrap()]);
    assert!(fixtures.status.success());
    let trace = dir.join("fixture_closure.jsonl");

    let out = babsim(&[
        "export-dot",
        trace.to_str().unwrap(),
        "--round",
        "10",
        "--observer",
        "0",
    ]);
    assert!(out.status.success());
    let dot = String::from_utf8_lossy(&out.stdout);
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("style=dashed"));
    assert!(dot.trim_end().ends_with('}'));

    let bad = babsim(&[
        "export-dot",
        trace.to_str().unwrap(),
        "--round",
        "99",
        "--observer",
        "0",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fixture_traces_pass_check() {
    let dir = scratch("fixtures");
    let out = babsim(&["fixtures", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let check = babsim(&[
        "check",
        dir.join("fixture_closure.jsonl").to_str().unwrap(),
        dir.join("fixture_base.jsonl").to_str().unwrap(),
    ]);
    assert!(check.status.success());
}
