//! Library side of the `largo` command: config files, CSV output, reports
//! and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod grid;
pub mod metrics_csv;
pub mod report;
pub mod spec_file;

pub use config::{parse_config, parse_config_str, render_config};
pub use error::{CliError, CliResult};
pub use metrics_csv::{emit_csv, read_csv};
pub use report::summarize;
