mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Hierarchical building, floor and position estimation from Wi-Fi
/// fingerprints.
#[derive(Parser)]
#[command(name = "hierloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Sets one configuration key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the autoencoder and write `encoder.hloc`.
    Pretrain(Common),
    /// Run every training stage and write the model file.
    Train(Common),
    /// Score a model and write `report.json`, `report.txt` and `errors.csv`.
    Evaluate(Common),
    /// Train and evaluate one pipeline per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of rnn_kind, bf_dropout, position_dropout, batch_size.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Repetitions per value, seeded `seed`, `seed + 1`, ...
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Predict `building,floor,x,y` for raw RSSI rows.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Input file; standard input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    RunConfig::resolve(c.config.as_deref(), &c.sets, c.seed, c.out.as_deref())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HIERLOC_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("HIERLOC_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Pretrain(c) => commands::cmd_pretrain(&resolve(&c)?, c.force),
        Command::Train(c) => commands::cmd_train(&resolve(&c)?, c.force),
        Command::Evaluate(c) => commands::cmd_evaluate(&resolve(&c)?, c.force),
        Command::Sweep {
            common,
            axis,
            values,
            reps,
        } => commands::cmd_sweep(&resolve(&common)?, &axis, &values, reps, common.force),
        Command::Predict { common, input } => {
            let cfg = resolve(&common)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            commands::cmd_predict(&cfg, input.as_ref(), &mut out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
