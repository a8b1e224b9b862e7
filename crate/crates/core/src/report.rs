//! End-to-end runs and the report bundle.
//!
//! Every file starts with a `# taintflow-report/1 {params}` line carrying
//! the run parameters. Output is byte-deterministic for a given chain and
//! configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainView, Txid};
use crate::control::{select_controls, write_controls, ControlCriteria, ControlError, ShapeMode};
use crate::metrics::{
    compute_metrics, evaluate_hypotheses, overlap_sets, Hypothesis, HypothesisVerdict, MetricsError, MetricsReport,
    VerdictThresholds,
};
use crate::par::Exec;
use crate::profiling::{
    classify_service_addresses, profile_addresses_with, AddressProfile, ProfilingError, ServiceClassification,
};
use crate::taint::{propagate, write_ledger, PropagationPolicy, Strategy, TaintError, TaintLedger, TaintSeed, Window};

pub const REPORT_FORMAT: &str = "taintflow-report/1";

const H1_NOTE: &str = "H1 is tested as 'theft higher'; the same hypothesis also predicts fewer reused \
addresses in thefts, so read its rank both ways";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Taint(#[from] TaintError),
    #[error(transparent)]
    Profiling(#[from] ProfilingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlOverrides {
    pub time_radius_days: u32,
    pub value_radius_sat: u64,
    pub shape_mode: ShapeMode,
    /// Keep at most this many controls, earliest first.
    pub max_controls: Option<usize>,
}

impl Default for ControlOverrides {
    fn default() -> Self {
        ControlOverrides {
            time_radius_days: ControlCriteria::DEFAULT_TIME_RADIUS_DAYS,
            value_radius_sat: ControlCriteria::DEFAULT_VALUE_RADIUS_SAT,
            shape_mode: ShapeMode::Exact,
            max_controls: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    /// Chain path as given; recorded in headers only.
    pub chain: String,
    pub seed: TaintSeed,
    pub strategies: Vec<Strategy>,
    pub window_days: u32,
    pub percentile: f64,
    pub service_halt: bool,
    pub controls: ControlOverrides,
    pub thresholds: VerdictThresholds,
    #[serde(skip)]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub exec: Exec,
}

impl RunConfig {
    pub fn new(chain: impl Into<String>, seed: TaintSeed, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            chain: chain.into(),
            seed,
            strategies: Strategy::ALL.to_vec(),
            window_days: 15,
            percentile: crate::profiling::DEFAULT_PERCENTILE,
            service_halt: true,
            controls: ControlOverrides::default(),
            thresholds: VerdictThresholds::default(),
            out_dir: out_dir.into(),
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.strategies.is_empty() {
            return Err(ReportError::Config("at least one strategy is required".into()));
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return Err(ReportError::Config("strategies must be distinct".into()));
        }
        if self.window_days == 0 {
            return Err(ReportError::Config("window must span at least one day".into()));
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(ReportError::Config(format!(
                "percentile {} outside (0, 1]",
                self.percentile
            )));
        }
        if self.thresholds.inconsistent >= self.thresholds.consistent {
            return Err(ReportError::Config("verdict thresholds overlap".into()));
        }
        Ok(())
    }

    fn header(&self) -> String {
        format!(
            "# {REPORT_FORMAT} {}\n",
            serde_json::to_string(self).expect("config serializes")
        )
    }
}

/// Column label used in summary tables, e.g. `FIFO^AP`.
pub fn strategy_label(strategy: Strategy, service_halt: bool) -> String {
    let name = match strategy {
        Strategy::Poison => "Poison",
        Strategy::Haircut => "Haircut",
        Strategy::Fifo => "FIFO",
        Strategy::Lifo => "LIFO",
        Strategy::Tiho => "TIHO",
    };
    if service_halt {
        format!("{name}^AP")
    } else {
        name.to_string()
    }
}

/// Ledgers and metrics for one seed under every configured strategy.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: TaintSeed,
    pub window: Window,
    pub classification: ServiceClassification,
    pub ledgers: Vec<TaintLedger>,
    pub reports: Vec<MetricsReport>,
}

impl SeedRun {
    pub fn report(&self, strategy: Strategy) -> Option<&MetricsReport> {
        self.ledgers
            .iter()
            .position(|l| l.strategy == strategy)
            .map(|i| &self.reports[i])
    }
}

/// Classifies services in the seed's window, then propagates and measures
/// every strategy in parallel.
pub fn run_seed(chain: &ChainView, seed: &TaintSeed, cfg: &RunConfig) -> Result<SeedRun, ReportError> {
    let window = Window::new(seed.start_time(chain)?, cfg.window_days);
    let classification = classify_service_addresses(chain, window, cfg.percentile)?;
    let policy = if cfg.service_halt {
        PropagationPolicy::halting(cfg.window_days, classification.service_set.clone())
    } else {
        PropagationPolicy::unhalted(cfg.window_days)
    };
    let runs = cfg.exec.try_map(&cfg.strategies, |&s| -> Result<_, ReportError> {
        let ledger = propagate(chain, seed, s, &policy)?;
        let profiles = profile_addresses_with(chain, &ledger, &classification.service_set, Exec::Sequential);
        let report = compute_metrics(chain, &ledger, &profiles, window)?;
        Ok((ledger, report))
    })?;
    let (ledgers, reports) = runs.into_iter().unzip();
    Ok(SeedRun {
        seed: seed.clone(),
        window,
        classification,
        ledgers,
        reports,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), ReportError> {
    let mut out = create(path)?;
    f(&mut out)
        .and_then(|()| out.flush())
        .map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Summary table with one row per variable and one column per strategy.
/// Poison is left out: its tainted transactions are Haircut's.
pub fn summary_table(cfg: &RunConfig, run: &SeedRun) -> String {
    let columns: Vec<(&TaintLedger, &MetricsReport)> = run
        .ledgers
        .iter()
        .zip(&run.reports)
        .filter(|(l, _)| l.strategy != Strategy::Poison)
        .collect();
    let mut s = cfg.header();
    s.push_str("Variables");
    for (l, _) in &columns {
        let _ = write!(s, ",{}", strategy_label(l.strategy, l.service_halt));
    }
    s.push('\n');
    type Cell = fn(&MetricsReport) -> String;
    let rows: [(&str, Cell); 7] = [
        ("Tainted TX", |r| r.totals.tainted_tx.to_string()),
        ("Tainted ADR", |r| r.totals.tainted_adr.to_string()),
        ("Service ADR", |r| r.totals.service_adr.to_string()),
        ("Reused ADR", |r| r.totals.reused_adr.to_string()),
        ("Fresh ADR", |r| r.totals.fresh_adr.to_string()),
        ("Avg. ADR Per TX", |r| format!("{:.2}", r.totals.avg_adr_per_tx)),
        ("Avg. TX Fee Value(Sat)", |r| {
            format!("{:.2}", r.totals.avg_tx_fee_value_sat)
        }),
    ];
    for (name, cell) in rows {
        s.push_str(name);
        for (_, r) in &columns {
            let _ = write!(s, ",{}", cell(r));
        }
        s.push('\n');
    }
    s
}

pub fn ledger_file_name(strategy: Strategy) -> String {
    format!("ledger-{}.tfl", strategy.as_str())
}

fn write_ledgers(dir: &Path, run: &SeedRun) -> Result<Vec<PathBuf>, ReportError> {
    let mut paths = Vec::new();
    for ledger in &run.ledgers {
        let path = dir.join(ledger_file_name(ledger.strategy));
        write_file(&path, |w| write_ledger(ledger, w))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Propagates the seed under every strategy and writes one ledger per
/// strategy plus `summary.csv`.
pub fn run_taint(chain: &ChainView, cfg: &RunConfig) -> Result<SeedRun, ReportError> {
    cfg.validate()?;
    let run = run_seed(chain, &cfg.seed, cfg)?;
    write_ledgers(&cfg.out_dir, &run)?;
    let table = summary_table(cfg, &run);
    write_file(&cfg.out_dir.join("summary.csv"), |w| w.write_all(table.as_bytes()))?;
    Ok(run)
}

/// Service classification and address profiles for the seed's window,
/// using the first configured strategy for the tainted and fresh flags.
pub fn run_profile(
    chain: &ChainView,
    cfg: &RunConfig,
) -> Result<(ServiceClassification, BTreeMap<String, AddressProfile>), ReportError> {
    cfg.validate()?;
    let window = Window::new(cfg.seed.start_time(chain)?, cfg.window_days);
    let classification = classify_service_addresses(chain, window, cfg.percentile)?;
    let ledger = propagate(
        chain,
        &cfg.seed,
        cfg.strategies[0],
        &PropagationPolicy::unhalted(cfg.window_days),
    )?;
    let profiles = profile_addresses_with(chain, &ledger, &classification.service_set, cfg.exec);

    let mut text = cfg.header();
    let _ = writeln!(text, "# threshold {}", classification.threshold);
    text.push_str("address,tx_count_in_window,first_activity,sent_tx_count,class,reused,fresh\n");
    for p in profiles.values() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            p.address,
            p.tx_count_in_window,
            p.first_activity,
            p.sent_tx_count,
            p.class.as_str(),
            p.reused,
            p.fresh
        );
    }
    write_file(&cfg.out_dir.join("profiles.csv"), |w| w.write_all(text.as_bytes()))?;
    let mut services = cfg.header();
    for a in classification.service_set.iter() {
        services.push_str(a);
        services.push('\n');
    }
    write_file(&cfg.out_dir.join("services.txt"), |w| w.write_all(services.as_bytes()))?;
    Ok((classification, profiles))
}

/// Control criteria and selection for the configured theft seed.
pub fn run_controls(chain: &ChainView, cfg: &RunConfig) -> Result<(ControlCriteria, Vec<Txid>), ReportError> {
    cfg.validate()?;
    let poison = propagate(
        chain,
        &cfg.seed,
        Strategy::Poison,
        &PropagationPolicy::unhalted(cfg.window_days),
    )?;
    let mut criteria = ControlCriteria::for_theft(chain, &cfg.seed, &poison)?;
    criteria.time_radius_days = cfg.controls.time_radius_days;
    criteria.value_radius_sat = cfg.controls.value_radius_sat;
    criteria.shape_mode = cfg.controls.shape_mode;
    let mut controls = match select_controls(chain, &criteria, cfg.exec) {
        Ok(c) => c,
        Err(ControlError::NoCandidates) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if let Some(max) = cfg.controls.max_controls {
        controls.truncate(max);
    }
    write_file(&cfg.out_dir.join("controls.txt"), |w| {
        write_controls(&criteria, &controls, w)
    })?;
    Ok((criteria, controls))
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub theft: SeedRun,
    pub controls: Vec<SeedRun>,
    /// Verdicts per strategy; empty when no control was found.
    pub verdicts: BTreeMap<Strategy, Vec<HypothesisVerdict>>,
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    run: String,
    seed: Txid,
    strategy: Strategy,
    service_threshold: usize,
    service_addresses: usize,
    metrics: &'a MetricsReport,
}

fn run_name(i: Option<usize>) -> String {
    i.map_or_else(|| "theft".to_string(), |i| format!("control-{:02}", i + 1))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Full comparison: theft and control runs, per-figure series, overlap
/// counts and hypothesis verdicts.
pub fn run_compare(chain: &ChainView, cfg: &RunConfig) -> Result<CompareOutcome, ReportError> {
    cfg.validate()?;
    let theft = run_taint(chain, cfg)?;
    let (_, control_ids) = run_controls(chain, cfg)?;
    if control_ids.is_empty() {
        log::warn!("no control transactions matched; writing a report without ranks");
    }
    let control_seeds: Vec<TaintSeed> = control_ids.iter().map(|t| TaintSeed::new(*t)).collect();
    let controls = cfg.exec.try_map(&control_seeds, |seed| run_seed(chain, seed, cfg))?;

    let mut verdicts = BTreeMap::new();
    if !controls.is_empty() {
        for (i, &s) in cfg.strategies.iter().enumerate() {
            let control_reports: Vec<MetricsReport> = controls.iter().map(|c| c.reports[i].clone()).collect();
            verdicts.insert(
                s,
                evaluate_hypotheses(&theft.reports[i], &control_reports, &cfg.thresholds)?,
            );
        }
    }

    let runs: Vec<(String, &SeedRun)> = std::iter::once((run_name(None), &theft))
        .chain(controls.iter().enumerate().map(|(i, c)| (run_name(Some(i)), c)))
        .collect();
    let out = &cfg.out_dir;
    let header = cfg.header();

    for (name, run) in runs.iter().skip(1) {
        write_ledgers(&out.join(name), run)?;
    }

    let mut metrics = Vec::new();
    for (name, run) in &runs {
        for (l, r) in run.ledgers.iter().zip(&run.reports) {
            metrics.push(RunMetrics {
                run: name.clone(),
                seed: run.seed.txid,
                strategy: l.strategy,
                service_threshold: run.classification.threshold,
                service_addresses: run.classification.service_set.len(),
                metrics: r,
            });
        }
    }
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_file(&out.join("metrics.json"), |w| writeln!(w, "{json}"))?;

    let mut per_day = header.clone();
    per_day.push_str("run,seed,strategy,day,tainted_tx,avg_fee_per_byte\n");
    let mut types = header.clone();
    types.push_str("run,seed,strategy,tainted_adr,service_pct,reused_pct,fresh_pct\n");
    let mut apt = header.clone();
    apt.push_str("run,seed,strategy,count,min,q1,median,q3,max,mean\n");
    let mut fees = header.clone();
    fees.push_str(
        "run,seed,strategy,avg_fee_value_sat,service_reach_outpoints,service_reach_addresses,service_reach_taint_sat\n",
    );
    for (name, run) in &runs {
        for (l, r) in run.ledgers.iter().zip(&run.reports) {
            let key = format!("{name},{},{}", run.seed.txid, l.strategy.as_str());
            for (d, (n, fpb)) in r.per_day_tx_counts.iter().zip(&r.fee_per_byte_series).enumerate() {
                let _ = writeln!(per_day, "{key},{},{n},{}", d + 1, opt_f64(*fpb));
            }
            let p = &r.address_type_percentages;
            let _ = writeln!(
                types,
                "{key},{},{},{},{}",
                r.totals.tainted_adr, p.service, p.reused, p.fresh
            );
            let a = &r.addresses_per_tx;
            let _ = writeln!(
                apt,
                "{key},{},{},{},{},{},{},{}",
                a.count, a.min, a.q1, a.median, a.q3, a.max, a.mean
            );
            let s = &r.service_reach;
            let _ = writeln!(
                fees,
                "{key},{},{},{},{}",
                r.avg_fee_value_sat, s.outpoints, s.addresses, s.taint_sat
            );
        }
    }
    write_file(&out.join("per_day.csv"), |w| w.write_all(per_day.as_bytes()))?;
    write_file(&out.join("address_types.csv"), |w| w.write_all(types.as_bytes()))?;
    write_file(&out.join("addresses_per_tx.csv"), |w| w.write_all(apt.as_bytes()))?;
    write_file(&out.join("fees.csv"), |w| w.write_all(fees.as_bytes()))?;

    let mut overlap = header.clone();
    overlap.push_str("strategies,intersection,exclusive\n");
    if theft.ledgers.len() >= 2 {
        let refs: Vec<&TaintLedger> = theft.ledgers.iter().collect();
        for o in overlap_sets(&refs)? {
            let names: Vec<&str> = o.members.iter().map(|&i| theft.ledgers[i].strategy.as_str()).collect();
            let _ = writeln!(overlap, "{},{},{}", names.join("+"), o.intersection, o.exclusive);
        }
    }
    write_file(&out.join("overlap.csv"), |w| w.write_all(overlap.as_bytes()))?;

    let mut table = header.clone();
    let _ = writeln!(table, "# note: {H1_NOTE}");
    table.push_str("strategy,hypothesis,metric,direction,theft_value,control_values,theft_percentile_rank,verdict\n");
    for (i, &s) in cfg.strategies.iter().enumerate() {
        match verdicts.get(&s) {
            Some(vs) => {
                for v in vs {
                    let controls: Vec<String> = v.control_values.iter().map(f64::to_string).collect();
                    let _ = writeln!(
                        table,
                        "{},{:?},{},higher,{},{},{},{}",
                        s.as_str(),
                        v.id,
                        v.id.metric(),
                        v.theft_value,
                        controls.join(";"),
                        v.theft_percentile_rank,
                        v.verdict.as_str()
                    );
                }
            }
            None => {
                for h in Hypothesis::ALL {
                    let _ = writeln!(
                        table,
                        "{},{h:?},{},higher,{},,,",
                        s.as_str(),
                        h.metric(),
                        h.value(&theft.reports[i])
                    );
                }
            }
        }
    }
    write_file(&out.join("verdicts.csv"), |w| w.write_all(table.as_bytes()))?;

    Ok(CompareOutcome {
        theft,
        controls,
        verdicts,
    })
}
