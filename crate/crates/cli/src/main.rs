use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedpbs_core::data::partition_report;
use fedpbs_core::{output, sim, Error, Executor, ExperimentConfig, Result, StrategyKind};

#[derive(Parser)]
#[command(
    name = "fedpbs",
    version,
    about = "Deterministic federated-learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; every key is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set seed=3`. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes rounds.csv, result.json, timing.csv and config.resolved.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run an (alpha, strategy, seed) grid; writes sweep.csv and summary.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated Dirichlet concentrations.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// Comma-separated strategies (fedavg, fedprox, fedbs, fedpbs).
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        /// Comma-separated master seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write the per-client class-count matrix of the configured partition.
    PartitionReport {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn executor() -> Result<Executor> {
    let threads = match std::env::var("FEDPBS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::Config(format!(
                    "FEDPBS_THREADS must be a positive integer, got {v:?}"
                ))
            })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Executor::with_threads(threads)
}

fn cmd_run(cfg: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = load_config(cfg)?;
    let result = sim::run_experiment(&cfg, &executor()?)?;
    output::write_run(out, &result)?;
    let last = result.final_record();
    println!(
        "round {}: accuracy {:.4}, loss {:.4}",
        last.round, last.global_accuracy, last.global_loss
    );
    Ok(())
}

fn cmd_sweep(
    cfg: &ConfigArgs,
    alphas: &[f64],
    strategies: &[String],
    seeds: &[u64],
    out: &Path,
) -> Result<()> {
    let cfg = load_config(cfg)?;
    let kinds: Vec<StrategyKind> = strategies
        .iter()
        .map(|s| StrategyKind::parse(s.trim()))
        .collect::<Result<_>>()?;
    let (rows, summaries) = sim::sweep(&cfg, alphas, &kinds, seeds, &executor()?)?;
    output::write_sweep(out, &rows, &summaries)?;
    for s in &summaries {
        println!(
            "alpha {} {}: accuracy {:.4} +- {:.4}",
            s.alpha,
            s.strategy.name(),
            s.mean_accuracy,
            s.std_accuracy
        );
    }
    Ok(())
}

fn cmd_partition_report(cfg: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = load_config(cfg)?;
    let prepared = sim::prepare(&cfg)?;
    let report = partition_report(&prepared.partition, &prepared.train);
    output::write_file(out, &report.to_csv())
}

/// 2: configuration, 3: data or file access, 4: numerical failure, 5: client failure.
fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Numerical { .. } => 4,
        Error::Client { .. } => 5,
        Error::SweepCell { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { cfg, out } => cmd_run(cfg, out),
        Command::Sweep {
            cfg,
            alphas,
            strategies,
            seeds,
            out,
        } => cmd_sweep(cfg, alphas, strategies, seeds, out),
        Command::PartitionReport { cfg, out } => cmd_partition_report(cfg, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedpbs: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
