mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{PredictorKind, Reference, Run, Summary};
use config::RunConfig;
use error::CliError;

/// Random-field surrogate pipeline: data generation, training, evaluation and Monte Carlo UQ.
#[derive(Debug, Parser)]
#[command(name = "fieldreg", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the training and test sets with the FEM.
    GenData,
    /// Train the surrogate and write a checkpoint and history.
    Train {
        /// Continue from the checkpoint's optimizer state for `train.epochs` more epochs.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Test-set metrics of a checkpoint, with the predictions dumped as FRDS.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte Carlo moments and probe densities, optionally against a paired FEM ensemble.
    Uq {
        #[arg(long, value_enum, default_value_t = Reference::None)]
        reference: Reference,
        #[arg(long, value_enum, default_value_t = PredictorKind::Surrogate)]
        predictor: PredictorKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Map one input field (one CSV per input channel) to its output fields.
    Predict {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = PredictorKind::Surrogate)]
        predictor: PredictorKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<Summary, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let checkpoint = match &cli.command {
        Command::Train { checkpoint, .. }
        | Command::Eval { checkpoint }
        | Command::Uq { checkpoint, .. }
        | Command::Predict { checkpoint, .. } => checkpoint.clone(),
        Command::GenData => None,
    };
    let run = Run::new(cfg, cli.out, checkpoint);
    match cli.command {
        Command::GenData => commands::gen_data(&run),
        Command::Train { resume, .. } => commands::train(&run, resume),
        Command::Eval { .. } => commands::eval(&run),
        Command::Uq { reference, predictor, .. } => commands::uq(&run, predictor, reference),
        Command::Predict { input, predictor, .. } => commands::predict(&run, predictor, &input),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(s) => {
            println!("{}", s.human);
            println!("{}", s.metrics_line());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
