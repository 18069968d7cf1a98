//! Command-line front end: config parsing, the `run`/`check`/`sweep`
//! commands, and deterministic CSV/JSON output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_check, cmd_run, cmd_sweep, CliError, ENV_FAULT_A_INV, ENV_OUTPUT_DIR};
pub use config::{parse_config, ConfigError, RunConfig};
pub use output::{RunSummary, DIAGNOSTICS_HEADER, TRACKS_HEADER};
