//! `blinder` — simulator and experiment driver for federated, adversarial
//! sensor-data anonymization.

use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Parser, Subcommand};

use blinder_cli::commands;
use blinder_cli::config::ExperimentConfig;
use blinder_cli::CliError;

#[derive(Parser)]
#[command(
    name = "blinder",
    about = "Federated adversarial anonymization of sensor data: synthesize datasets, \
             train the anonymization model, evaluate privacy/utility trade-offs",
    version
)]
struct Cli {
    /// Experiment config file (flat key = value format); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Aggregation strategy: `meta` (two-step meta optimization) or `fedavg`.
    #[arg(long, global = true)]
    aggregation: Option<String>,

    /// Per-client public-class imbalance ratio R_D (>= 1).
    #[arg(long, global = true)]
    rd: Option<f64>,

    /// Participation ratio R_U in (0, 1].
    #[arg(long, global = true)]
    ru: Option<f64>,

    /// Global training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Batch size b = s + q; support and query scale proportionally.
    #[arg(long, global = true)]
    batch: Option<usize>,

    /// Comma-separated private attributes to anonymize (schema names).
    #[arg(long = "multi-attr", global = true)]
    multi_attr: Option<String>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-signal population (CSV per client).
    Synth,
    /// Segment, standardize and cache the dataset.
    Prepare,
    /// Run federated training and write the model bundle plus round log.
    Train,
    /// Anonymize test segments with a trained bundle.
    Anonymize {
        /// Model bundle (defaults to <out_dir>/model.bundle).
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Restrict to one client's test split.
        #[arg(long)]
        client: Option<u32>,
    },
    /// Train inference classifiers and score raw vs anonymized data.
    Eval {
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Personalize a trained bundle on a small fraction of one client's data.
    Adapt {
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Client to adapt for.
        #[arg(long)]
        client: u32,
        /// Local training iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Fraction of local data used for adaptation (must be < 0.05).
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train with per-epoch snapshots and write the privacy/utility curve.
    Curve,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    config.override_with(
        cli.seed,
        cli.aggregation.as_deref(),
        cli.rd,
        cli.ru,
        cli.epochs,
        cli.batch,
        cli.multi_attr.as_deref(),
        cli.out.as_deref(),
    )?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth => commands::cmd_synth(&config),
        Command::Prepare => commands::cmd_prepare(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Anonymize { bundle, client } => {
            commands::cmd_anonymize(&config, bundle.as_deref(), *client)
        }
        Command::Eval { bundle } => commands::cmd_eval(&config, bundle.as_deref()),
        Command::Adapt {
            bundle,
            client,
            iterations,
            fraction,
        } => commands::cmd_adapt(&config, bundle.as_deref(), *client, *iterations, *fraction),
        Command::Curve => commands::cmd_curve(&config),
    }
}

fn main() -> ProcessExit {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ProcessExit::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ProcessExit::from(err.exit_code() as u8)
        }
    }
}
