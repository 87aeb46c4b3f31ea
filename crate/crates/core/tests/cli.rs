mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::tempdir;
use tokengrid::report::{Report, CSV_HEADER};

use common::{demo_path, demo_text};

fn tokengrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokengrid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_the_demo() {
    let out = tokengrid(&["validate", path(&demo_path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
}

#[test]
fn validate_reports_missing_and_invalid_files() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&tokengrid(&["validate", path(&missing)])), 2);

    let mut v: Value = serde_json::from_str(&demo_text()).unwrap();
    v["incentives"]["beta"] = (-1.0).into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let out = tokengrid(&["validate", path(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("incentives.beta"), "{}", stderr(&out));

    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    assert_eq!(code(&tokengrid(&["validate", path(&garbled)])), 1);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&tokengrid(&[])), 64);
    assert_eq!(code(&tokengrid(&["frobnicate"])), 64);
    assert_eq!(code(&tokengrid(&["run", path(&demo_path()), "--seed", "x"])), 64);
    assert_eq!(code(&tokengrid(&["--help"])), 0);
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = tokengrid(&["run", path(&demo_path()), "--out", path(out_dir), "--seed", "7"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let line = String::from_utf8_lossy(&out.stdout);
        for key in ["tokens_issued=", "tokens_levied=", "congestion_events=", "curtailed_mwh=", "blocks="] {
            assert!(line.contains(key), "{line}");
        }
    }
    for file in ["report.json", "timeseries.csv", "chain.log"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs between runs");
    }
    let report = Report::from_json(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 7);
    let csv = std::fs::read_to_string(a.join("timeseries.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(csv.lines().count(), 1 + 90 * report.actors.len());
}

#[test]
fn run_into_an_unwritable_location_exits_4() {
    let dir = tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = tokengrid(&["run", path(&demo_path()), "--out", path(&blocker)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn export_round_trips() {
    let dir = tempdir().unwrap();
    let out_dir = dir.path().join("o");
    assert_eq!(code(&tokengrid(&["run", path(&demo_path()), "--out", path(&out_dir)])), 0);
    let report = out_dir.join("report.json");

    let csv = tokengrid(&["export", path(&report)]);
    assert_eq!(code(&csv), 0);
    assert_eq!(csv.stdout, std::fs::read(out_dir.join("timeseries.csv")).unwrap());

    let json_out = dir.path().join("again.json");
    let json = tokengrid(&["export", path(&report), "--format", "json", "--out", path(&json_out)]);
    assert_eq!(code(&json), 0);
    assert_eq!(std::fs::read(&json_out).unwrap(), std::fs::read(&report).unwrap());

    assert_eq!(code(&tokengrid(&["export", path(&report), "--format", "xml"])), 1);
    assert_eq!(code(&tokengrid(&["export", path(&dir.path().join("missing.json"))])), 2);
    std::fs::write(dir.path().join("bad.json"), "[]").unwrap();
    assert_eq!(code(&tokengrid(&["export", path(&dir.path().join("bad.json"))])), 1);
}
