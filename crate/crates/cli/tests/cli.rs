use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn taintflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taintflow"))
        .args(args)
        .env_remove("TAINTFLOW_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Generates a fifo-consistent chain; returns the theft txid.
fn synth(dir: &Path) -> String {
    let o = taintflow(&[
        "synth",
        "--out-dir",
        dir.to_str().unwrap(),
        "--behavior",
        "fifo-consistent",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o).trim().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((
            e.strip_prefix(dir).unwrap().display().to_string(),
            fs::read(&e).unwrap(),
        ));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn synth_then_ingest_check() {
    let dir = tempfile::tempdir().unwrap();
    let txid = synth(dir.path());
    assert_eq!(txid.len(), 64);
    assert!(dir.path().join("truth.tft").exists());
    let o = taintflow(&["ingest-check", dir.path().join("chain.tfc").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("validation: ok"));
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let o = taintflow(&[
        "taint",
        "--chain",
        "x.tfc",
        "--seed",
        &"0".repeat(64),
        "--strategies",
        "fifo,magic",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn missing_chain_is_a_runtime_error() {
    let o = taintflow(&["taint", "--chain", "/nonexistent.tfc", "--seed", &"0".repeat(64)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: loading /nonexistent.tfc"));
}

#[test]
fn taint_writes_ledgers_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let txid = synth(dir.path());
    let out = dir.path().join("out");
    let chain = dir.path().join("chain.tfc");
    let o = taintflow(&[
        "taint",
        "--chain",
        chain.to_str().unwrap(),
        "--seed",
        &txid,
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 5);
    for s in ["poison", "haircut", "fifo", "lifo", "tiho"] {
        assert!(out.join(format!("ledger-{s}.tfl")).exists(), "{s}");
    }
    assert!(out.join("summary.csv").exists());
}

#[test]
fn compare_is_deterministic_across_modes() {
    let dir = tempfile::tempdir().unwrap();
    let txid = synth(dir.path());
    let chain = dir.path().join("chain.tfc");
    let mut bundles = Vec::new();
    for (name, extra) in [("a", None), ("b", Some("--sequential"))] {
        let out = dir.path().join(name);
        let mut args = vec![
            "compare",
            "--chain",
            chain.to_str().unwrap(),
            "--seed",
            &txid,
            "--max-controls",
            "3",
        ];
        let out_s = out.to_str().unwrap().to_string();
        args.extend(["--out-dir", &out_s]);
        args.extend(extra);
        let o = taintflow(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("controls 3"));
        bundles.push(files(&out));
    }
    assert_eq!(bundles[0], bundles[1]);
}
