mod commands;
mod config;
mod dataio;
mod reports;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Counterfactual explanations for time series classifiers.
#[derive(Parser)]
#[command(name = "cfx", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a cylinder/bell/funnel dataset as UCR-style .tsv splits.
    #[command(name = "generate-cbf")]
    GenerateCbf(commands::gen_cbf::GenCbfArgs),
    /// Train a convolutional classifier and save it as a .cfxm model file.
    Train(commands::train::TrainArgs),
    /// Generate counterfactual explanations for test instances.
    Explain(commands::explain::ExplainArgs),
    /// Score explanation results: validity, norms, plausibility, nominality.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Emit long-format CSVs (original, counterfactual, neighbors) for plotting.
    #[command(name = "plot-data")]
    PlotData(commands::plot_data::PlotDataArgs),
}

/// Failures carry their exit code: 2 config/usage, 3 file IO, 4 domain
/// preconditions (bad data, shape mismatches, failed invariants).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Domain(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn domain(message: impl std::fmt::Display) -> Self {
        CliError::Domain(message.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenerateCbf(args) => commands::gen_cbf::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Explain(args) => commands::explain::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::PlotData(args) => commands::plot_data::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}
