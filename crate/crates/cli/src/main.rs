use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonlocal_cli::{experiments, run_file, CliError};

#[derive(Parser)]
#[command(name = "nonlocal", version, about = "Runs nonlocal-to-local convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the experiment described by a TOML config.
    Run {
        #[arg(required_unless_present = "list")]
        config: Option<PathBuf>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the parallel sweeps.
        #[arg(long)]
        workers: Option<usize>,
        /// Lists the experiment registry and exits.
        #[arg(long)]
        list: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, out, workers, list } = Cli::parse().command;
    if list {
        for e in experiments::REGISTRY {
            println!("{}", e.name);
        }
        return ExitCode::SUCCESS;
    }
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let config = config.expect("clap requires a config without --list");
    match run_file(&config, out.as_deref()) {
        Ok((cfg, outcome, dir)) => {
            print!("{}", outcome.summary(&cfg.experiment));
            println!("artifacts in {}", dir.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e @ (CliError::UnknownExperiment(_) | CliError::Parse { .. } | CliError::Invalid(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
