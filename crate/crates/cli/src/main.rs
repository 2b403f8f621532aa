mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use attnseg::{Error, Method};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

/// Weakly supervised hemorrhage segmentation from Swin attention.
#[derive(Debug, Parser)]
#[command(name = "attnseg", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory [default: $ATTNSEG_DATA_ROOT].
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Directory for folds, models, maps, masks and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Held-out fold [default: the last fold].
    #[arg(long, global = true)]
    test_fold: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    OneLogit,
    Multilabel,
    Unet,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset under the data root.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        positive_fraction: Option<f64>,
        #[arg(long)]
        side: Option<usize>,
    },
    /// Index a dataset and write the shared study-level fold split.
    Ingest {
        /// Label table [default: <data-root>/labels.csv].
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Train a classifier or the U-Net on the training folds.
    Train {
        #[arg(long, value_enum)]
        model: TrainTarget,
    },
    /// Fine-tune a two-logit head on the one-logit classifier.
    Finetune,
    /// Write brain-gated saliency maps (or U-Net probabilities) for validation and test slices.
    Extract {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Model to read [default: the one trained for the method].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Threshold maps into masks, tuning attention thresholds on validation slices.
    Segment {
        #[arg(long, value_parser = parse_method)]
        method: Method,
    },
    /// Score masks on the held-out fold and write the report tables.
    Evaluate {
        /// Methods to score [default: every method with masks].
        #[arg(long, value_parser = parse_method, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Fold split file [default: <out>/folds.json].
        #[arg(long)]
        folds_file: Option<PathBuf>,
    },
    /// Render predicted and true masks over the brain window as PNG files.
    Overlay {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Single slice id [default: every test slice].
        #[arg(long)]
        id: Option<String>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn resolve(cli: &Cli) -> attnseg::Result<RunConfig> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(root) = &cli.data_root {
        config.data_root = Some(root.clone());
    } else if config.data_root.is_none() {
        config.data_root = std::env::var_os("ATTNSEG_DATA_ROOT").map(PathBuf::from);
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(fold) = cli.test_fold {
        config.test_fold = Some(fold);
    }
    match &cli.command {
        Command::Synth { n, positive_fraction, side } => {
            if let Some(n) = n {
                config.synth.n_slices = *n;
            }
            if let Some(f) = positive_fraction {
                config.synth.positive_fraction = *f;
            }
            if let Some(side) = side {
                config.synth.side = *side;
            }
        }
        Command::Ingest { labels, folds, split_seed } => {
            if let Some(labels) = labels {
                config.labels = Some(labels.clone());
            }
            if let Some(k) = folds {
                config.experiment.folds = *k;
            }
            if let Some(s) = split_seed {
                config.split_seed = Some(*s);
            }
        }
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> attnseg::Result<()> {
    let config = resolve(&cli)?;
    match cli.command {
        Command::Synth { .. } => commands::synth(&config),
        Command::Ingest { .. } => commands::ingest(&config),
        Command::Train { model } => commands::train(&config, model),
        Command::Finetune => commands::finetune(&config),
        Command::Extract { method, checkpoint } => commands::extract(&config, method, checkpoint),
        Command::Segment { method } => commands::segment(&config, method),
        Command::Evaluate { methods, folds_file } => commands::evaluate(&config, &methods, folds_file),
        Command::Overlay { method, id } => commands::overlay(&config, method, id.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Param(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
