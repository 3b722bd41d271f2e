//! End-to-end runs of the `dskm` binary on small streams.

use std::path::Path;
use std::process::{Command, Output};

fn dskm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dskm")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn write_stream(dir: &Path, name: &str, body: &str) -> String {
    let p = path(dir, name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn small_stream_builds_exact_coreset_that_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let stream = path(dir.path(), "s.txt");
    let out = dskm(&["generate", "churn", "--out", &stream, "-L", "5", "--waves", "2", "--wave-size", "30", "--residual", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let coreset = path(dir.path(), "c.txt");
    let out = dskm(&["build", "--k", "3", "--stream", &stream, "--out", &coreset]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("shortcut"));
    let out = dskm(&["verify", "--k", "3", "--stream", &stream, "--coreset", &coreset, "--families", "all:5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["max_error"].as_f64().unwrap() < 1e-12);
}

#[test]
fn empty_stream_gives_empty_coreset() {
    let dir = tempfile::tempdir().unwrap();
    let stream = path(dir.path(), "s.txt");
    assert!(dskm(&["generate", "churn", "--out", &stream, "-L", "4", "--waves", "1", "--wave-size", "10"]).status.success());
    let coreset = path(dir.path(), "c.txt");
    let out = dskm(&["build", "--k", "2", "--stream", &stream, "--out", &coreset]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("wrote 0 entries"));
}

#[test]
fn stats_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let stream = path(dir.path(), "s.txt");
    assert!(dskm(&["generate", "clustered", "--out", &stream, "--ops", "120", "--deletions", "0.3", "--seed", "4"]).status.success());
    let run = || dskm(&["stats", "--k", "2", "--stream", &stream, "--format", "json", "--seed", "9"]);
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let lines: Vec<serde_json::Value> =
        a.stdout.split(|&c| c == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
    assert_eq!(lines.first().unwrap()["row"], "shortcut");
    assert_eq!(lines.last().unwrap()["row"], "total");
    // Two guesses per unit of d·L.
    assert_eq!(lines.iter().filter(|l| l["row"] == "guess").count(), 2 * 2 * 6);
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dskm(&["build", "--k", "2"]).status.code(), Some(2));
    let stream = write_stream(dir.path(), "bad.txt", "this is not a stream\n");
    let out = dskm(&["build", "--k", "2", "--stream", &stream, "--out", &path(dir.path(), "c.txt")]);
    assert_eq!(out.status.code(), Some(1));
    let good = path(dir.path(), "s.txt");
    assert!(dskm(&["generate", "uniform", "--out", &good, "--ops", "5", "-L", "3"]).status.success());
    let out = dskm(&["build", "--k", "2", "--epsilon", "0.7", "--stream", &good, "--out", &path(dir.path(), "c.txt")]);
    assert_eq!(out.status.code(), Some(1));
}
