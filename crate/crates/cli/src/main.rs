use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use taintflow::control::ShapeMode;
use taintflow::ingest::{export_dataset, load_dataset_with, LoadOptions};
use taintflow::metrics::VerdictThresholds;
use taintflow::report::{run_compare, run_controls, run_profile, run_taint, ControlOverrides, RunConfig};
use taintflow::synthgen::{generate, write_truth, Behavior, ScenarioSpec, TheftSpec};
use taintflow::{ChainView, Exec, Strategy, TaintSeed, Txid};

#[derive(Parser)]
#[command(name = "taintflow", version, about = "Taint analysis for UTXO transaction graphs")]
struct Cli {
    /// Run everything on the current thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a chain file and report integrity problems.
    IngestCheck {
        chain: PathBuf,
        /// Drop offending transactions instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Re-export the loaded chain to this path.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Classify service addresses and profile every address in the window.
    Profile(RunArgs),
    /// Propagate taint under each strategy; writes ledgers and a summary.
    Taint(RunArgs),
    /// Select control transactions for the theft seed.
    Controls(CompareArgs),
    /// Theft versus control comparison with hypothesis verdicts.
    Compare(CompareArgs),
    /// Generate a synthetic chain with ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    chain: PathBuf,
    /// Seed (theft) transaction id.
    #[arg(long)]
    seed: Txid,
    /// Seed only these output indices.
    #[arg(long, value_delimiter = ',')]
    vouts: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',', default_value = "poison,haircut,fifo,lifo,tiho")]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 15)]
    window_days: u32,
    #[arg(long, default_value_t = taintflow::profiling::DEFAULT_PERCENTILE)]
    percentile: f64,
    /// Keep propagating through service addresses.
    #[arg(long)]
    no_service_halt: bool,
    #[arg(long, env = "TAINTFLOW_OUT_DIR", default_value = "taintflow-out")]
    out_dir: PathBuf,
    /// Accept chains with integrity problems by dropping offenders.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 30)]
    control_time_radius_days: u32,
    #[arg(long, default_value_t = 1_000.0)]
    control_value_radius_btc: f64,
    /// Match only the input address count.
    #[arg(long)]
    control_input_only: bool,
    #[arg(long)]
    max_controls: Option<usize>,
    #[arg(long, default_value_t = 0.75)]
    consistent_rank: f64,
    #[arg(long, default_value_t = 0.25)]
    inconsistent_rank: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "TAINTFLOW_OUT_DIR", default_value = "taintflow-out")]
    out_dir: PathBuf,
    /// Scenario as JSON; other scenario flags are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    rng_seed: u64,
    #[arg(long, default_value_t = 300)]
    population: usize,
    #[arg(long, default_value_t = 20)]
    duration_days: u32,
    #[arg(long, default_value_t = 15)]
    window_days: u32,
    #[arg(long, default_value_t = 200)]
    txs_per_day: usize,
    #[arg(long, default_value = "fan-out")]
    behavior: Behavior,
    /// Generate background activity only.
    #[arg(long)]
    no_theft: bool,
    #[arg(long, default_value_t = 500)]
    amount_btc: u64,
    #[arg(long, default_value_t = 2)]
    distribution_day: u32,
    #[arg(long, default_value_t = 40)]
    hops: usize,
    #[arg(long, default_value_t = 3)]
    services: usize,
}

fn load(path: &PathBuf, lenient: bool, exec: Exec) -> Result<ChainView> {
    let outcome = load_dataset_with(path, LoadOptions { strict: !lenient, exec })
        .with_context(|| format!("loading {}", path.display()))?;
    if outcome.unknown_fields > 0 {
        log::warn!("{} unknown fields ignored", outcome.unknown_fields);
    }
    if !outcome.dropped.is_empty() {
        log::warn!("dropped {} offending transactions", outcome.dropped.len());
    }
    Ok(outcome.chain)
}

fn config(args: &RunArgs, exec: Exec) -> RunConfig {
    let seed = match &args.vouts {
        Some(v) => TaintSeed::with_vouts(args.seed, v.clone()),
        None => TaintSeed::new(args.seed),
    };
    let mut cfg = RunConfig::new(args.chain.display().to_string(), seed, &args.out_dir);
    cfg.strategies = args.strategies.clone();
    cfg.window_days = args.window_days;
    cfg.percentile = args.percentile;
    cfg.service_halt = !args.no_service_halt;
    cfg.exec = exec;
    cfg
}

fn compare_config(args: &CompareArgs, exec: Exec) -> Result<RunConfig> {
    if args.control_value_radius_btc.is_nan() || args.control_value_radius_btc <= 0.0 {
        bail!("control value radius must be positive");
    }
    let mut cfg = config(&args.run, exec);
    cfg.controls = ControlOverrides {
        time_radius_days: args.control_time_radius_days,
        value_radius_sat: (args.control_value_radius_btc * taintflow::SATS_PER_BTC as f64).round() as u64,
        shape_mode: if args.control_input_only {
            ShapeMode::InputOnly
        } else {
            ShapeMode::Exact
        },
        max_controls: args.max_controls,
    };
    cfg.thresholds = VerdictThresholds {
        consistent: args.consistent_rank,
        inconsistent: args.inconsistent_rank,
    };
    Ok(cfg)
}

fn synth_spec(args: &SynthArgs) -> Result<ScenarioSpec> {
    if let Some(path) = &args.spec {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    Ok(ScenarioSpec {
        rng_seed: args.rng_seed,
        population: args.population,
        duration_days: args.duration_days,
        window_days: args.window_days,
        txs_per_day: args.txs_per_day,
        theft: (!args.no_theft).then(|| TheftSpec {
            amount_sat: args.amount_btc * taintflow::SATS_PER_BTC,
            distribution_day: args.distribution_day,
            behavior: args.behavior,
            hops: args.hops,
        }),
        service_count: args.services,
        ..ScenarioSpec::default()
    })
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::IngestCheck { chain, lenient, export } => {
            let outcome = load_dataset_with(&chain, LoadOptions { strict: !lenient, exec })
                .with_context(|| format!("loading {}", chain.display()))?;
            println!("transactions: {}", outcome.chain.len());
            println!("outputs: {}", outcome.chain.output_count());
            println!("unknown fields: {}", outcome.unknown_fields);
            println!("dropped: {}", outcome.dropped.len());
            if outcome.validation.is_empty() {
                println!("validation: ok");
            } else {
                print!("{}", outcome.validation);
            }
            if let Some(path) = export {
                let n = export_dataset(&outcome.chain, &path)?;
                info!("exported {n} records to {}", path.display());
            }
        }
        Command::Profile(args) => {
            let chain = load(&args.chain, args.lenient, exec)?;
            let (classification, profiles) = run_profile(&chain, &config(&args, exec))?;
            println!(
                "threshold {} service addresses {} profiled {}",
                classification.threshold,
                classification.service_set.len(),
                profiles.len()
            );
        }
        Command::Taint(args) => {
            let chain = load(&args.chain, args.lenient, exec)?;
            let run = run_taint(&chain, &config(&args, exec))?;
            for l in &run.ledgers {
                println!(
                    "{} tainted_tx {} tainted_adr {}",
                    l.strategy.as_str(),
                    l.tainted_txids.len(),
                    l.tainted_addresses.len()
                );
            }
        }
        Command::Controls(args) => {
            let chain = load(&args.run.chain, args.run.lenient, exec)?;
            let (_, controls) = run_controls(&chain, &compare_config(&args, exec)?)?;
            if controls.is_empty() {
                log::warn!("no control transactions matched");
            }
            for c in controls {
                println!("{c}");
            }
        }
        Command::Compare(args) => {
            let chain = load(&args.run.chain, args.run.lenient, exec)?;
            let outcome = run_compare(&chain, &compare_config(&args, exec)?)?;
            println!("controls {}", outcome.controls.len());
            for (s, vs) in &outcome.verdicts {
                let line: Vec<String> = vs
                    .iter()
                    .map(|v| format!("{:?}={}", v.id, v.verdict.as_str()))
                    .collect();
                println!("{} {}", s.as_str(), line.join(" "));
            }
        }
        Command::Synth(args) => {
            let spec = synth_spec(&args)?;
            let (chain, truth) = generate(&spec)?;
            let chain_path = args.out_dir.join("chain.tfc");
            fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
            let n = export_dataset(&chain, &chain_path)?;
            let truth_path = args.out_dir.join("truth.tft");
            let file = fs::File::create(&truth_path).with_context(|| format!("creating {}", truth_path.display()))?;
            write_truth(&truth, BufWriter::new(file))?;
            info!("wrote {n} transactions to {}", chain_path.display());
            match truth.theft_txid {
                Some(t) => println!("{t}"),
                None => println!("no theft"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
