use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fggm_cli::{commands, config, CliError};

#[derive(Parser)]
#[command(
    name = "fggm",
    version,
    about = "Graph-constrained covariance estimation for multivariate functional data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config field, e.g. `--set generator.n=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a dataset and its true covariance.
    Simulate,
    /// Fit the configured estimators.
    Fit,
    /// Compare estimates with the truth, or run the train/test comparison.
    Evaluate,
    /// simulate, fit and evaluate.
    Pipeline,
    /// Validate an external dataset and print its shape.
    IngestCheck,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!(
            "out={}",
            serde_json::Value::String(out.display().to_string())
        ));
    }
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Pipeline => commands::pipeline(&cfg),
        Command::IngestCheck => commands::ingest_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
