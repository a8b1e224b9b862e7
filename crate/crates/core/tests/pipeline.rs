use std::fs;
use std::io::BufReader;

use taintflow::report::{ledger_file_name, run_compare, run_profile, run_taint, ReportError, RunConfig};
use taintflow::synthgen::{generate, Behavior, ScenarioSpec};
use taintflow::taint::read_ledger;
use taintflow::{Strategy, TaintSeed};

fn setup() -> (taintflow::ChainView, TaintSeed, tempfile::TempDir) {
    let (chain, truth) = generate(&ScenarioSpec::default()).unwrap();
    (chain, truth.seed().unwrap(), tempfile::tempdir().unwrap())
}

#[test]
fn taint_writes_one_ledger_per_strategy_and_a_summary() {
    let (chain, seed, dir) = setup();
    let cfg = RunConfig::new("synthetic.tfc", seed, dir.path());
    let run = run_taint(&chain, &cfg).unwrap();
    assert_eq!(run.ledgers.len(), 5);
    for l in &run.ledgers {
        let file = fs::File::open(dir.path().join(ledger_file_name(l.strategy))).unwrap();
        assert_eq!(&read_ledger(BufReader::new(file)).unwrap(), l);
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# taintflow-report/1 {\"chain\":\"synthetic.tfc\""));
    assert_eq!(lines.next(), Some("Variables,Haircut^AP,FIFO^AP,LIFO^AP,TIHO^AP"));
    assert_eq!(lines.count(), 7);
}

#[test]
fn unhalted_labels_drop_the_suffix() {
    let (chain, seed, dir) = setup();
    let mut cfg = RunConfig::new("c", seed, dir.path());
    cfg.service_halt = false;
    cfg.strategies = vec![Strategy::Tiho, Strategy::Fifo];
    run_taint(&chain, &cfg).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().nth(1), Some("Variables,TIHO,FIFO"));
}

#[test]
fn profile_writes_every_active_address() {
    let (chain, seed, dir) = setup();
    let cfg = RunConfig::new("c", seed, dir.path());
    let (classification, profiles) = run_profile(&chain, &cfg).unwrap();
    let csv = fs::read_to_string(dir.path().join("profiles.csv")).unwrap();
    let rows = csv.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, profiles.len() + 1);
    let services = fs::read_to_string(dir.path().join("services.txt")).unwrap();
    assert_eq!(services.lines().skip(1).count(), classification.service_set.len());
}

#[test]
fn compare_without_controls_still_reports() {
    let (chain, seed, dir) = setup();
    let mut cfg = RunConfig::new("c", seed, dir.path());
    cfg.controls.value_radius_sat = 1;
    let out = run_compare(&chain, &cfg).unwrap();
    assert!(out.controls.is_empty() && out.verdicts.is_empty());
    let verdicts = fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    let rows: Vec<&str> = verdicts.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 5 * 6);
    assert!(rows.iter().all(|r| r.ends_with(",,,")));
    assert_eq!(
        fs::read_to_string(dir.path().join("controls.txt"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn compare_caps_controls_and_ranks_every_hypothesis() {
    let mut spec = ScenarioSpec::default();
    spec.theft.as_mut().unwrap().behavior = Behavior::FifoConsistent;
    let (chain, truth) = generate(&spec).unwrap();
    let (seed, dir) = (truth.seed().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = RunConfig::new("c", seed, dir.path());
    cfg.controls.max_controls = Some(4);
    let out = run_compare(&chain, &cfg).unwrap();
    assert_eq!(out.controls.len(), 4);
    for vs in out.verdicts.values() {
        assert_eq!(vs.len(), 6);
        assert!(vs
            .iter()
            .all(|v| v.control_values.len() == 4 && (0.0..=1.0).contains(&v.theft_percentile_rank)));
    }
    for i in 1..=4 {
        assert!(dir
            .path()
            .join(format!("control-{i:02}"))
            .join("ledger-fifo.tfl")
            .exists());
    }
}

#[test]
fn bad_configurations_are_refused() {
    let (chain, seed, dir) = setup();
    let base = RunConfig::new("c", seed, dir.path());
    let mut dup = base.clone();
    dup.strategies = vec![Strategy::Fifo, Strategy::Fifo];
    let mut pct = base.clone();
    pct.percentile = 0.0;
    let mut win = base.clone();
    win.window_days = 0;
    for cfg in [dup, pct, win] {
        assert!(matches!(run_taint(&chain, &cfg), Err(ReportError::Config(_))));
    }
}
