use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const DIMS: [&str; 4] = ["--set", "provider.embedding_dim=64", "--set", "provider.relation_dim=64"];

fn sgr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgr"))
        .args(args)
        .env_remove("SGR_PROVIDER_ENDPOINT")
        .env_remove("SGR_PROVIDER_TIMEOUT_S")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small dataset built once and shared by the read-only tests.
fn built() -> &'static (TempDir, PathBuf) {
    static BUILT: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    BUILT.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let ds = dir.path().join("ds");
        let graph = dir.path().join("graph");
        let o = sgr(&["synth", "--kind", "dataset", "--out", s(&ds), "--frames", "60", "--dim", "64"]);
        assert_eq!(code(&o), 0, "{o:?}");
        let mut args = vec!["build", "--dataset", s(&ds), "--out", s(&graph)];
        args.extend(DIMS);
        let o = sgr(&args);
        assert_eq!(code(&o), 0, "{o:?}");
        let out = stdout(&o);
        assert!(out.contains("built 60 frames"), "{out}");
        assert!(out.contains("rooms 2"), "{out}");
        (dir, graph)
    })
}

#[test]
fn build_writes_a_loadable_graph() {
    let (_, graph) = built();
    assert!(graph.join("graph.json").is_file());
    assert!(graph.join("effective_config.toml").is_file());
    let text = std::fs::read_to_string(graph.join("effective_config.toml")).unwrap();
    assert!(text.contains("embedding_dim = 64"), "{text}");
}

#[test]
fn object_query_reports_matches() {
    let (_, graph) = built();
    let o = sgr(&["query", "--graph", s(graph), "--object", "chair", "--threshold", "-1"]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(stdout(&o).starts_with("chair:"), "{}", stdout(&o));
}

#[test]
fn room_query_runs() {
    let (_, graph) = built();
    let o = sgr(&["query", "--graph", s(graph), "--room", "kitchen", "--threshold", "-1"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2, "{lines:?}");
    assert!(lines.iter().all(|l| l.starts_with("room n") && l.contains("similarity")), "{lines:?}");
}

#[test]
fn export_writes_dot() {
    let (dir, graph) = built();
    let dot = dir.path().join("g.dot");
    let o = sgr(&["export", "--graph", s(graph), "--dot", s(&dot)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.trim_start().starts_with("digraph"), "{text}");
}

#[test]
fn reasoning_fixture_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    assert_eq!(code(&sgr(&["synth", "--kind", "reasoning", "--out", s(&fx)])), 0);

    let o = sgr(&["eval", "--reasoning", s(&fx), "--repeats", "3"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert!(last.starts_with("overall") && last.contains("100.00") && last.trim_end().ends_with(" 0"), "{last}");

    let out = dir.path().join("report");
    let o = sgr(&[
        "reason",
        "--graph",
        s(&fx.join("graph")),
        "--task",
        "Throw all the trash bags into the trash can.",
        "--out",
        s(&out),
        "--config",
        s(&fx.join("config.toml")),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["verdicts"].as_array().is_some_and(|v| !v.is_empty()), "{report}");
    assert!(out.join("effective_config.toml").is_file());
}

#[test]
fn retrieval_eval_prints_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("anchor.json");
    let o = sgr(&["synth", "--kind", "retrieval-anchor", "--out", s(&fx), "--objects", "10", "--vocabulary", "40", "--dim", "16"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let json = dir.path().join("scores.json");
    let o = sgr(&["eval", "--retrieval", s(&fx), "--ks", "1,5", "--out", s(&json)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(doc["accuracy"]["1"], serde_json::json!(100.0), "{doc}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&sgr(&["frobnicate"])), 1);
    assert_eq!(code(&sgr(&["query", "--graph", "x"])), 1);
    assert_eq!(code(&sgr(&["--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = sgr(&["build", "--dataset", s(&missing), "--out", s(&dir.path().join("g"))]);
    assert_eq!(code(&o), 2, "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = sgr(&["query", "--graph", s(&missing), "--object", "chair"]);
    assert_eq!(code(&o), 2, "{o:?}");
}

#[test]
fn provider_errors_exit_3() {
    let (dir, graph) = built();
    // nothing listens on port 9 of localhost
    let o = Command::new(env!("CARGO_BIN_EXE_sgr"))
        .args(["query", "--graph", s(graph), "--object", "chair", "--set", "provider.kind=remote", "--set", "provider.retries=0"])
        .env("SGR_PROVIDER_ENDPOINT", "http://127.0.0.1:9")
        .env("SGR_PROVIDER_TIMEOUT_S", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{o:?}");
}
