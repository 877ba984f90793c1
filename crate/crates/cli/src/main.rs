mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtgn_core::encoder::HeadKind;

use crate::config::RunConfig;

/// Noise-robust intrusion detection on temporal flow graphs.
///
/// Typical run: `synth` a dataset, `train` one checkpoint per head, then
/// `evaluate` both against increasing amounts of injected noise.
#[derive(Parser)]
#[command(name = "rtgn", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// INI run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Detection head: svdd (baseline) or gaussian.
    #[arg(long, global = true, value_parser = parse_head)]
    head: Option<HeadKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled flow stream as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one head on the training split and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Inject noise into the test split and report ROC-AUC per model.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Repeat to compare models; report columns follow this order.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write the text table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Noise ratios in percent, comma separated.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Score the whole stream and write per-event scores.
    Trace {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trace CSV; split boundaries go to `<out>.boundaries.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    HeadKind::parse(s).ok_or_else(|| format!("expected svdd or gaussian, got {s:?}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.shared.seed {
        config.seed = seed;
    }
    if let Some(head) = cli.shared.head {
        config.head = head;
    }
    match cli.command {
        Command::Synth { out } => commands::synth(&config, &out),
        Command::Train {
            data,
            out,
            loss,
            epochs,
            lr,
        } => {
            if let Some(epochs) = epochs {
                config.train.epochs = epochs;
            }
            if let Some(lr) = lr {
                config.train.lr = lr;
            }
            config.validate()?;
            let loss = loss.unwrap_or_else(|| commands::sibling(&out, "loss.csv"));
            commands::train(&config, &data, &out, &loss)
        }
        Command::Evaluate {
            data,
            checkpoints,
            out,
            table,
            ratios,
            resamples,
        } => {
            if let Some(ratios) = ratios {
                config.ratios = ratios;
            }
            if let Some(resamples) = resamples {
                config.resamples = resamples;
            }
            config.validate()?;
            commands::evaluate(&config, cli.shared.head, &data, &checkpoints, &out, table.as_deref())
        }
        Command::Trace { data, checkpoint, out } => commands::trace(&config, cli.shared.head, &data, &checkpoint, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rtgn: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
