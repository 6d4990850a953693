//! Batch front end for the temporal graph models: train, evaluate, sweep,
//! expressiveness bench, and CSV ingestion. Runs are configured by a
//! `key = value` file plus `--set` overrides and drop deterministic
//! artifacts into one output directory.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "tempograph", version, about = "temporal graph learning runner")]
struct Cli {
    /// Configuration file (`key = value` lines); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; falls back to $TEMPOGRAPH_OUT, then ./tempograph-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Repeatable `key=value` config override applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a link-prediction model and write checkpoint + metrics.
    Train,
    /// Score the test span of the configured dataset with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cross the alpha/beta/width grid and write a plot-ready CSV.
    Sweep,
    /// Compare trajectory variants on the symmetric-cycle probe.
    BenchExpressiveness,
    /// Validate a CSV event log and write a summary.
    Ingest { path: PathBuf },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingFile(path.clone()));
            }
            let text = std::fs::read_to_string(path)?;
            RunConfig::parse_text(&text)?
        }
        None => RunConfig::default(),
    };
    for assignment in &cli.sets {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            CliError::Config(config::ConfigError::Syntax {
                line: 0,
                text: assignment.clone(),
            })
        })?;
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn resolve_out(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("TEMPOGRAPH_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tempograph-out"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    let out = resolve_out(&cli);
    match &cli.cmd {
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Eval { checkpoint } => commands::cmd_eval(&cfg, &out, checkpoint),
        Command::Sweep => commands::cmd_sweep(&cfg, &out),
        Command::BenchExpressiveness => commands::cmd_bench_expressiveness(&cfg, &out),
        Command::Ingest { path } => commands::cmd_ingest(&cfg, &out, path),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
