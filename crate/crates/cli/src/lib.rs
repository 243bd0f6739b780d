//! Subcommands of the `dance` binary. Each writes fixed filenames under `--out`.

pub mod args;
pub mod commands;
pub mod config;

use std::fmt;

pub use args::{Cli, Command};
pub use config::ExperimentConfig;

pub const CHECKPOINT_FILE: &str = dance_core::trainer::CHECKPOINT_FILE;
pub const STEPS_FILE: &str = dance_core::trainer::STEPS_FILE;
pub const RUN_FILE: &str = "run.trec";
pub const METRICS_FILE: &str = "metrics.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const DETACHING_FILE: &str = "detaching.csv";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";

pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const IO: u8 = 1;
    pub const DATA: u8 = 2;
    pub const TRAINING: u8 = 3;
    pub const MISSING_ARTIFACT: u8 = 4;
    pub const DIAGNOSTICS_INPUT: u8 = 5;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(message: String) -> Self {
        Self { code: exit::IO, message }
    }

    pub fn data(message: String) -> Self {
        Self { code: exit::DATA, message }
    }

    pub fn training(message: String) -> Self {
        Self { code: exit::TRAINING, message }
    }

    pub fn missing(message: String) -> Self {
        Self { code: exit::MISSING_ARTIFACT, message }
    }

    pub fn diagnostics(message: String) -> Self {
        Self { code: exit::DIAGNOSTICS_INPUT, message }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Runs one subcommand; the returned text is the command's stdout summary.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
    }
}
