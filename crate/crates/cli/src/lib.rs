//! Command-line front end for training, simulating and evaluating koopflow
//! models.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use error::CliError;

/// Version string with the git revision when built from a checkout.
pub const VERSION: &str = env!("KOOPFLOW_BUILD_VERSION");

#[derive(Debug, Parser)]
#[command(name = "koopflow", version = VERSION, about = "Stable linear predictors for demonstrated motions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Flavor {
    Linear,
    Coupled,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Roll out a trained model in physical units.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Initial state as comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "demo")]
        from: Option<Vec<f64>>,
        /// Start from the first sample of this demo (0-based), read from --dataset.
        #[arg(long, requires = "dataset")]
        demo: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Duration as a multiple of the mean demo time.
        #[arg(long, default_value_t = 5.0)]
        horizon_multiple: f64,
        /// Duration in seconds; overrides --horizon-multiple.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score rollouts against demonstrations.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
        /// Samples per demonstration before scoring.
        #[arg(long)]
        resample: Option<usize>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sample the learned vector field on a grid over the scaled box.
    Streamlines {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        grid: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a dataset with known linearizing coordinates.
    Synthetic {
        #[arg(long)]
        out: PathBuf,
        /// Ground truth JSON; defaults to `<out stem>.truth.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = Flavor::Coupled)]
        flavor: Flavor,
        #[arg(long, default_value_t = 3)]
        trajectories: usize,
        #[arg(long, default_value_t = 600)]
        samples: usize,
    },
    /// Print the JSON schema of the run configuration.
    Schema,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, quiet } => commands::train(&config, quiet),
        Command::Simulate { model, from, demo, dataset, horizon_multiple, duration, samples, output } => {
            let start = match (from, demo) {
                (Some(x), _) => commands::Start::State(x),
                (None, Some(k)) => commands::Start::Demo(dataset.expect("clap requires dataset"), k),
                (None, None) => return Err(CliError::Config("give --from or --demo".into())),
            };
            let span = match duration {
                Some(d) => commands::Span::Seconds(d),
                None => commands::Span::DemoMultiple(horizon_multiple),
            };
            commands::simulate(&model, start, span, samples, output.as_deref())
        }
        Command::Eval { model, dataset, split, resample, output } => {
            commands::eval(&model, &dataset, split, resample, output.as_deref())
        }
        Command::Streamlines { model, grid, output } => commands::streamlines(&model, grid, output.as_deref()),
        Command::Synthetic { out, truth, seed, dim, flavor, trajectories, samples } => {
            let flavor = match flavor {
                Flavor::Linear => koopflow::data::SyntheticFlavor::Linear,
                Flavor::Coupled => koopflow::data::SyntheticFlavor::Coupled,
            };
            let config = koopflow::data::SyntheticConfig { seed, dim, flavor, trajectories, samples, ..Default::default() };
            commands::synthetic(&config, &out, truth.as_deref())
        }
        Command::Schema => {
            print!("{}", config::RUN_CONFIG_SCHEMA);
            Ok(())
        }
    }
}
