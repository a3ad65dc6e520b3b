//! `t1cl`: verification and experiment workflows for tensor 1x1 convolutions.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;
use crate::config::{RunConfig, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "t1cl", version, about = "Tensor 1x1 convolution toolkit", after_help = config::keys_help())]
struct Cli {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set kernel.order=3`. Values are parsed as JSON, else taken as strings.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Corrupt the computation under test (negative control).
    #[arg(long, global = true, hide = true)]
    inject_fault: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factorized vs dense contraction sweep; CSV on stdout, exit 1 on any error above 1e-9.
    Oracle,
    /// Finite-difference gradient checks at kernel, layer and network level.
    Gradcheck,
    /// Parameter, FLOP and wall-time table per format and order.
    Bench,
    /// Train on synthetic patches; writes checkpoint, loss.csv and eval.csv.
    Train,
    /// Close each operation of a checkpoint in turn; writes ablation.csv.
    Ablate,
    /// Per-operation feature histograms of one block; writes hist_block<b>.csv.
    Hist,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match RunConfig::load(cli.config.as_deref(), &cli.sets, std::env::var(SEED_ENV).ok()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("t1cl: {e}");
            return ExitCode::from(match e {
                config::ConfigError::Io(..) => commands::EXIT_IO,
                config::ConfigError::Invalid(_) => commands::EXIT_CONFIG,
            });
        }
    };
    let result = match cli.command {
        Command::Oracle => commands::oracle(&config, cli.inject_fault),
        Command::Gradcheck => commands::gradcheck(&config, cli.inject_fault),
        Command::Bench => commands::bench(&config),
        Command::Train => commands::train(&config),
        Command::Ablate => commands::ablate(&config),
        Command::Hist => commands::hist(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("t1cl: verification failed: {msg}");
            ExitCode::from(commands::EXIT_VERIFY)
        }
        Err(Failure::Library(e)) => {
            eprintln!("t1cl: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
