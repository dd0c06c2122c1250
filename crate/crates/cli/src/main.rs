//! `trilstm` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trilstm::ModelKind;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "trilstm", version, about = "Cross-fed triple-LSTM glaucoma biomarker miner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, splitting, training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        separability: Option<f64>,
    },
    /// Train a model and write a checkpoint and loss trace.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint on the test partition.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate every model with and without order shuffling.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
        /// Seeds per grid cell.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Extract Yes/No decision graphs from a TRI-LSTM checkpoint.
    Graph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// Dataset CSV; generated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// rnn, lstm or tri-lstm.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Disable presentation-order shuffling during training.
    #[arg(long)]
    no_shuffle: bool,
}

fn resolve(common: &Common, edit: impl FnOnce(&mut RunConfig)) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.generator.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if common.jobs.is_some() {
        cfg.jobs = common.jobs;
    }
    edit(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_run(cfg: &mut RunConfig, run: &RunArgs) {
    if run.data.is_some() {
        cfg.data = run.data.clone();
    }
    if let Some(m) = run.model {
        cfg.model_kind = m;
    }
    if let Some(e) = run.epochs {
        cfg.train.epochs = e;
    }
    if run.no_shuffle {
        cfg.train.shuffle_order = false;
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { common, n, separability } => {
            let cfg = resolve(&common, |c| {
                if let Some(n) = n {
                    c.generator.n_patients = n;
                }
                if let Some(s) = separability {
                    c.generator.separability = s;
                }
            })?;
            commands::gen_data(&cfg)
        }
        Command::Train { common, run } => commands::train(&resolve(&common, |c| apply_run(c, &run))?),
        Command::Eval { common, checkpoint, data } => {
            let cfg = resolve(&common, |c| {
                if checkpoint.is_some() {
                    c.checkpoint = checkpoint;
                }
                if data.is_some() {
                    c.data = data;
                }
            })?;
            commands::eval(&cfg)
        }
        Command::Bench { common, run, seeds } => {
            let cfg = resolve(&common, |c| {
                apply_run(c, &run);
                if let Some(s) = seeds {
                    c.bench_seeds = s;
                }
            })?;
            commands::bench(&cfg)
        }
        Command::Graph { common, checkpoint, data } => {
            let cfg = resolve(&common, |c| {
                if checkpoint.is_some() {
                    c.checkpoint = checkpoint;
                }
                if data.is_some() {
                    c.data = data;
                }
            })?;
            commands::graph(&cfg)
        }
        Command::Gradcheck { common } => commands::gradcheck(&resolve(&common, |_| {})?),
    }
}

/// 1 for configuration, input and protocol problems; 2 for numeric
/// failures at run time.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<trilstm::Error>() {
        Some(e) if !e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
