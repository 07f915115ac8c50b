use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use trunc_estim::SampleMatrix;
use trunc_estim_cli::commands;
use trunc_estim_cli::ExperimentConfig;

/// Estimate exponential-family parameters from samples truncated to an unknown set.
#[derive(Parser)]
#[command(name = "trunc-estim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of repeats.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample from the configured ground truth; writes samples CSV and truth JSON into --out.
    Gen {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Estimate parameters from a samples CSV.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        /// Report path; defaults to the config's report output, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncated linear regression; the last CSV column is the response.
    Regress {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical check suite; exits nonzero if any check fails.
    Verify {
        /// Suite or check name; all checks when omitted.
        #[arg(long)]
        suite: Option<String>,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time sampling and estimation for the configured experiment.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TRUNC_ESTIM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("TRUNC_ESTIM_THREADS={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(run: &RunArgs) -> Result<(ExperimentConfig, u64, usize)> {
    let cfg = ExperimentConfig::load(&run.config)?;
    let seed = run.seed.unwrap_or(cfg.seed);
    let repeats = run.repeats.unwrap_or(cfg.repeats).max(1);
    Ok((cfg, seed, repeats))
}

fn report_path(out: Option<PathBuf>, cfg: &ExperimentConfig) -> Option<PathBuf> {
    out.or_else(|| cfg.outputs.report.as_ref().map(PathBuf::from))
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Gen { run, out } => {
            let (cfg, seed, _) = load(&run)?;
            commands::gen(&cfg, &out, seed)?;
        }
        Command::Estimate { run, data, out } => {
            let (cfg, seed, repeats) = load(&run)?;
            let x = SampleMatrix::read_csv_path(&data, false).with_context(|| format!("reading {}", data.display()))?;
            let report = commands::estimate(&cfg, &x, seed, repeats)?;
            commands::emit_json(report_path(out, &cfg).as_ref(), &report)?;
        }
        Command::Regress { run, data, out } => {
            let (cfg, seed, repeats) = load(&run)?;
            let x = SampleMatrix::read_csv_path(&data, false).with_context(|| format!("reading {}", data.display()))?;
            let report = commands::regress(&cfg, &x, seed, repeats)?;
            commands::emit_json(report_path(out, &cfg).as_ref(), &report)?;
        }
        Command::Verify { suite, out } => return commands::verify(suite.as_deref(), out.as_deref()),
        Command::Bench { run, out } => {
            let (cfg, seed, repeats) = load(&run)?;
            match out {
                Some(p) => commands::bench(&cfg, seed, repeats, std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?)?,
                None => commands::bench(&cfg, seed, repeats, std::io::stdout().lock())?,
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
