use std::io::{self, Write};
use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use mismatch_cli::commands;
use mismatch_cli::config::SEED_ENV;
use mismatch_cli::{CliError, ExperimentConfig};

/// Decision-mismatch adversarial example detection experiments.
///
/// Settings come from built-in defaults, then the config file, then the
/// MISMATCH_SEED environment variable, then `--key value` flags naming any
/// config key.
#[derive(Parser)]
#[command(name = "mismatch", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both classifiers and record their test accuracy.
    TrainModels(Settings),
    /// Attack summary over the evaluation sample and one detection dataset per attack kind.
    BuildAttackDatasets(Settings),
    /// Cross-validate the detectors and compute the generalization matrix.
    EvaluateDetectors(Settings),
    /// Print the resolved configuration and its hash.
    ShowConfig(Settings),
}

#[derive(Args)]
struct Settings {
    /// Config overrides such as `--seed 7` or `--pool-size=2000`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::TrainModels(s)
    | Command::BuildAttackDatasets(s)
    | Command::EvaluateDetectors(s)
    | Command::ShowConfig(s)) = &cli.command;
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), env_seed.as_deref(), &s.overrides)?;
    let written = match cli.command {
        Command::TrainModels(_) => commands::train_models(&cfg)?.written,
        Command::BuildAttackDatasets(_) => commands::build_attack_datasets(&cfg)?.written,
        Command::EvaluateDetectors(_) => commands::evaluate_detectors(&cfg)?.written,
        Command::ShowConfig(_) => {
            let text = format!("{}# hash {}\n", cfg.canonical_text(), cfg.hash());
            let _ = io::stdout().lock().write_all(text.as_bytes());
            return Ok(());
        }
    };
    let mut out = io::stdout().lock();
    for path in written {
        let _ = writeln!(out, "{}", path.display());
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code() as i32);
    }
}
