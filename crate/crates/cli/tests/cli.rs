use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use attnsel_core::synth::write_fixture_workspace;

fn attnsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnsel")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn fixture_config(dir: &Path) -> String {
    write_fixture_workspace(dir).unwrap();
    let cfg = dir.join("attnsel.toml");
    fs::write(
        &cfg,
        r#"
corpus = "corpus.jsonl"
taxonomy = "taxonomy.jsonl"
dumps = "dumps.jsonl"
mapping = "mapping.csv"

[folds]
k = 3

[evaluate]
k_grid = [5]

[kg]
backend = "dump"
edges = "edges.tsv"
"#,
    )
    .unwrap();
    cfg.to_str().unwrap().to_string()
}

fn error_line(out: &Output) -> String {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    stderr.lines().last().unwrap_or("").to_string()
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "corpus = \"nope.jsonl\"\ntaxonomy = \"nope.jsonl\"\n").unwrap();
    let out = attnsel(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let line = error_line(&out);
    let err: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["code"], 2);
    assert!(err["message"].as_str().unwrap().contains("nope.jsonl"));
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap() + "\nunknown = 1\n").unwrap();
    assert_eq!(attnsel(&["ingest", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn out_of_order_stage_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let out = attnsel(&["compare", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).contains("\"error\":\"data\""));
}

#[test]
fn attend_on_fixture_lists_expected_terms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    assert!(attnsel(&["ingest", "--config", &cfg]).status.success());
    let out = attnsel(&["attend", "--config", &cfg, "--stdout"]);
    assert!(out.status.success(), "{}", error_line(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, fs::read_to_string(dir.path().join("out/attend/attended_vocabulary.tsv")).unwrap());
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..2], ["1", "gene"]);
    assert_eq!(rows[1][..2], ["2", "regulation"]);
    let gene: f64 = rows[0][2].parse().unwrap();
    assert!((gene - (0.7 / 3.0 + 0.55 + 0.2) / 3.0).abs() < 1e-9);
    assert_eq!(rows[0][4], "2");
}

#[test]
fn report_is_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let out = attnsel(&["all", "--config", &cfg]);
    assert!(out.status.success(), "{}", error_line(&out));
    let report = dir.path().join("out/report/report.md");
    let first = fs::read(&report).unwrap();
    assert!(attnsel(&["report", "--config", &cfg]).status.success());
    assert_eq!(first, fs::read(&report).unwrap());

    let other = dir.path().join("other");
    let out = attnsel(&["all", "--config", &cfg, "--jobs", "1", "--output-dir", other.to_str().unwrap()]);
    assert!(out.status.success(), "{}", error_line(&out));
    assert_eq!(first, fs::read(other.join("report/report.md")).unwrap());
    for stage in ["ingest", "attend", "select", "compare", "domains", "evaluate"] {
        assert_eq!(
            fs::read(dir.path().join("out").join(stage).join("manifest.json")).unwrap(),
            fs::read(other.join(stage).join("manifest.json")).unwrap(),
            "{stage}"
        );
    }
}

#[test]
fn seed_flag_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    assert!(attnsel(&["ingest", "--config", &cfg]).status.success());
    let a = fs::read_to_string(dir.path().join("out/ingest/folds.tsv")).unwrap();
    assert!(attnsel(&["ingest", "--config", &cfg, "--seed", "9"]).status.success());
    let b = fs::read_to_string(dir.path().join("out/ingest/folds.tsv")).unwrap();
    assert_ne!(a.lines().next(), b.lines().next());
}

#[test]
fn synth_writes_a_runnable_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let out = attnsel(&["synth", "--output", ws.to_str().unwrap(), "--documents", "40"]);
    assert!(out.status.success());
    let cfg = ws.join("attnsel.toml");
    let out = attnsel(&["ingest", "--config", cfg.to_str().unwrap(), "--stdout"]);
    assert!(out.status.success(), "{}", error_line(&out));
    assert!(String::from_utf8(out.stdout).unwrap().contains("documents\t40"));
}
