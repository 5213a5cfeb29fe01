//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stugn_cli::config::RunConfig;
use stugn_cli::{pipeline, CliError};

#[derive(Parser)]
#[command(name = "stugn", about = "Spatio-temporal wind forecasting on unified sample-per-node graphs", version)]
struct Cli {
    /// Run configuration file (flat key-value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for experiment-matrix cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Replace the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic base dataset CSV.
    Generate,
    /// Write corrupted dataset CSVs and audit logs per missing rate.
    Corrupt {
        /// Corrupt only this rate instead of the configured list.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Train the model × missing-rate × seed matrix; writes metrics and
    /// checkpoints.
    Train,
    /// Score best-validation checkpoints on the test split.
    Evaluate,
    /// Render the accuracy and energy tables plus a text summary.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::from_text("")?,
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.train.seeds = vec![seed];
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let path = pipeline::cmd_generate(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Corrupt { rate } => {
            for dir in pipeline::cmd_corrupt(&cfg, *rate)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Train => {
            let path = pipeline::cmd_train(&cfg, cli.jobs)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate => {
            let path = pipeline::cmd_evaluate(&cfg, cli.jobs)?;
            println!("wrote {}", path.display());
        }
        Command::Report => {
            for path in pipeline::cmd_report(&cfg)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
