//! `muhs` binary: simulate the periodic two-component system and check its
//! structural inequalities from a plain-text config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use muhs::cli::{self, parse_config};

#[derive(Parser)]
#[command(name = "muhs", version, about = "Pseudospectral simulator for a periodic two-component nonlocal transport system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configured scenario and write diagnostics.csv, tracks.csv,
    /// and summary.json (exit 0: horizon reached; exit 2: breakdown).
    Run {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Run the inequality suites enabled by the config and print a pass/fail
    /// table (exit 0 only if every enabled suite passes).
    Check {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Re-run the configured scenario over a list of grid sizes and write
    /// convergence.csv.
    Sweep {
        /// Path to the config file.
        config: PathBuf,
        /// Grid sizes, ascending and even, e.g. `--n 64,128,256`.
        #[arg(long = "n", value_delimiter = ',', required = true)]
        n: Vec<usize>,
    },
}

fn load_config(path: &PathBuf) -> Result<cli::RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn dispatch(cmd: &Command) -> Result<i32, String> {
    match cmd {
        Command::Run { config } => {
            let cfg = load_config(config)?;
            cli::cmd_run(&cfg).map_err(|e| e.to_string())
        }
        Command::Check { config } => {
            let cfg = load_config(config)?;
            cli::cmd_check(&cfg).map_err(|e| e.to_string())
        }
        Command::Sweep { config, n } => {
            let cfg = load_config(config)?;
            cli::cmd_sweep(&cfg, n).map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
