//! `fairsynth` command line: run an audit from a config, validate a config,
//! or re-aggregate an existing report directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairsynth::experiment::{self, ExperimentConfig, ExperimentError};
use log::info;

#[derive(Parser)]
#[command(name = "fairsynth", version, about = "Audit fairness of models trained on real vs synthetic tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write the report files.
    Run {
        config: PathBuf,
        /// Comma-separated subset of the configured seeds.
        #[arg(long, value_delimiter = ',')]
        seed_subset: Option<Vec<u64>>,
        /// Write outputs here instead of the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Recompute aggregates from report.json and rewrite the CSV views.
    Report { dir: PathBuf },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            seed_subset,
            output,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seed_subset {
                cfg = cfg.with_seeds(&seeds)?;
            }
            let report = experiment::run_experiment(&cfg)?;
            let dir = output.unwrap_or_else(|| cfg.output_path());
            experiment::emit_outputs(&report, &dir)?;
            println!("wrote {} seeds to {}", report.records.len(), dir.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: ok ({} seeds)", config.display(), cfg.seeds.len());
        }
        Command::Report { dir } => {
            let report = experiment::reaggregate(experiment::read_report(&dir)?)?;
            info!("re-aggregated {} seeds", report.records.len());
            experiment::emit_outputs(&report, &dir)?;
            println!("rewrote reports in {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage problems count as configuration errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
