//! Command-line driver for `hjb-core`: JSON configs, checkpoints, CSV outputs
//! and the experiment commands.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod recipes;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

use config::PolicyName;

#[derive(Debug, Parser)]
#[command(name = "hjb", version, about = "Train and evaluate neural value functions for stochastic optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write logs, metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: objective statistics and, where an oracle exists, relative errors.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the evaluation rollouts to trajectories.csv.
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Monte Carlo reference values for the benchmark problems.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Headerless CSV of `s,z_1,...,z_d` rows; defaults to sampled initial states.
        #[arg(long)]
        points: Option<PathBuf>,
        /// Overrides `eval.oracle_samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Two-dimensional visit histograms of rollouts at chosen times.
    Histogram {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 2, value_names = ["I", "J"])]
        axes: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        slices: Vec<f64>,
        #[arg(long)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pmp-feedback")]
        policy: PolicyArg,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [-3.0, 3.0], allow_negative_numbers = true)]
        range: Vec<f64>,
        /// Overrides `eval.n_rollouts`.
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Paired PmpFeedback and ZeroDrift training runs.
    CompareSampling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        repeats: u64,
    },
    /// Width needed to reach the target, per dimension.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a bundled recipe.
    Recipe {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(recipes::NAMES))]
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyArg {
    PmpFeedback,
    ZeroDrift,
}

impl From<PolicyArg> for PolicyName {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::PmpFeedback => PolicyName::PmpFeedback,
            PolicyArg::ZeroDrift => PolicyName::ZeroDrift,
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, seed, resume } => commands::cmd_train(&config, &out, seed, resume.as_deref()),
        Command::Eval { checkpoint, config, out, dump_trajectories } => commands::cmd_eval(&checkpoint, &config, &out, dump_trajectories),
        Command::Oracle { config, out, points, samples } => commands::cmd_oracle(&config, &out, points.as_deref(), samples),
        Command::Histogram { checkpoint, config, axes, slices, bins, out, policy, range, rollouts } => {
            commands::cmd_histogram(&commands::HistogramArgs {
                checkpoint: &checkpoint,
                config: &config,
                axes: [axes[0], axes[1]],
                slices: &slices,
                bins,
                out: &out,
                policy: policy.into(),
                range: [range[0], range[1]],
                rollouts,
            })
        }
        Command::CompareSampling { config, out, repeats } => commands::cmd_compare_sampling(&config, &out, repeats),
        Command::Scaling { config, dims, out } => commands::cmd_scaling(&config, &dims, &out),
        Command::Recipe { name } => {
            print!("{}", recipes::get(&name).expect("validated by clap"));
            Ok(())
        }
    }
}
