//! Command-line front end: data generation, training, evaluation, scenario
//! sweeps and figure tables.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use chaosode_bench::Scenario;
use clap::{ArgAction, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "chaosode", version, about = "Learn ODE right-hand sides from trajectory data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a predator-prey trajectory to CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a data CSV.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model against the reference trajectories.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// `all`, `ex_it`, `ex_oot` or `ex_ood`.
        #[arg(long, default_value = "all")]
        setup: String,
        #[arg(long, default_value_t = chaosode_bench::eval::DEFAULT_EVAL_POINTS)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark scenario.
    Scenario {
        #[arg(long)]
        id: Option<Scenario>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = false, action = ArgAction::Set)]
        resume: bool,
    },
    /// Build a figure table from scenario results.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        figure: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { config, out, seed } => commands::generate(config.as_deref(), &out, seed),
        Command::Train { config, data, out } => commands::train(config.as_deref(), &data, &out),
        Command::Eval { model, setup, points, out } => commands::eval(&model, &setup, points, out.as_deref()),
        Command::Scenario { id, config, out, workers, resume } => commands::scenario(commands::ScenarioArgs {
            id,
            config: config.as_deref(),
            out: &out,
            workers,
            resume,
        }),
        Command::Report { results, figure, out } => commands::report(&results, &figure, out.as_deref()),
    }
}
