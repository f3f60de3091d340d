use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dapper_cli::ledger::{Ledger, Status};
use dapper_core::scenegen::DatasetManifest;

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/configs/tiny.json")
}

fn dapper(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapper"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn render_then_cached_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&dapper(&["render", "--config", cfg], dir.path())), 0);
    let source = DatasetManifest::load(&dir.path().join("data/source/manifest.jsonl")).unwrap();
    assert_eq!(source.records.len(), 1000);
    let target = DatasetManifest::load(&dir.path().join("data/target/manifest.jsonl")).unwrap();
    assert_eq!(target.records.len(), 100);

    assert_eq!(code(&dapper(&["render", "--config", cfg], dir.path())), 0);
    assert_eq!(code(&dapper(&["render", "--config", cfg, "--stage-force"], dir.path())), 0);
    let ledger = Ledger::open(&dir.path().join("ledger.jsonl")).unwrap();
    let status: Vec<Status> = ledger.entries().iter().map(|e| e.status).collect();
    assert_eq!(status, vec![Status::Ok, Status::Cached, Status::Ok]);
}

#[test]
fn later_stage_without_inputs_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = dapper(&["project", "--config", tiny().to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dapper render"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dapper(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&dapper(&["render", "--seed", "x"], dir.path())), 2);
    assert_eq!(code(&dapper(&["render", "--config", "/nonexistent.json"], dir.path())), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 1, "gan": {"steps": 0}}"#).unwrap();
    let o = dapper(&["render", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gan.steps"));

    let o = Command::new(env!("CARGO_BIN_EXE_dapper"))
        .args(["render", "--out"])
        .arg(dir.path())
        .env("DAPPER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&dapper(&["--help"], dir.path())), 0);
}
