use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perfrank_cli::commands::{self, Globals};
use perfrank_cli::CliError;

/// Fairness-aware re-ranking experiments with strategic content creators.
#[derive(Debug, Parser)]
#[command(name = "perfrank", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; the PERFRANK_THREADS environment variable takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic market as items.csv and interactions.csv.
    GenData,
    /// Train the relevance simulator and write model.txt.
    TrainSim,
    /// Run every policy in the grid and write metrics, manifest and summary.
    Run,
    /// Summarize a metrics.csv file.
    Report {
        /// Metrics file; defaults to <out>/metrics.csv.
        metrics: Option<PathBuf>,
        /// Rounds compared against round 0 in the category table.
        #[arg(long, value_delimiter = ',')]
        rounds: Option<Vec<usize>>,
    },
    /// Rank candidates by simulator relevance alone and report round-0 metrics.
    Baseline,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("PERFRANK_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(vec![format!("PERFRANK_THREADS: `{v}` is not a thread count")])),
        _ => Ok(flag),
    }
}

fn execute(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Run(format!("thread pool: {e}")))?;
    }
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    let cfg = commands::resolve(&globals)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::TrainSim => commands::train_sim(&cfg),
        Command::Run => commands::run(&cfg),
        Command::Baseline => commands::baseline(&cfg),
        Command::Report { metrics, rounds } => {
            let path = metrics.unwrap_or_else(|| cfg.out_dir().join("metrics.csv"));
            commands::report(&path, rounds.as_deref().unwrap_or(&cfg.report.rounds))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
