use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steel_cli::{run, summarize, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "steel", version, about = "Run and summarize pessimistic policy learning sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, N, T, seed) cell of a config not yet recorded.
    Run {
        config: PathBuf,
        /// Cells trained concurrently.
        #[arg(long)]
        workers: Option<usize>,
        /// Drop existing results first.
        #[arg(long)]
        overwrite: bool,
    },
    /// Aggregate results.jsonl into summary.csv.
    Summarize { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, workers, overwrite } => ExperimentConfig::load(&config)
            .and_then(|cfg| run(&cfg, &RunOptions { workers, overwrite }))
            .map(|report| {
                log::info!(
                    "{} completed, {} skipped, {} failed",
                    report.completed,
                    report.skipped,
                    report.failed
                );
                report.failed == 0
            }),
        Command::Summarize { dir } => summarize(&dir).map(|path| {
            log::info!("wrote {}", path.display());
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
