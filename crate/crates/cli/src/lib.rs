//! Command-line surface for figpriv: scoring, masking, comparison and checks.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use config::{CliConfig, Settings};
use error::CliError;

/// Merge `--config` with flags and dispatch.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    let settings = Settings::resolve(file.overlay(cli.global.as_config()))?;
    match &cli.command {
        Command::Risk { command } => commands::risk(&settings, command),
        Command::Mask { input } => commands::mask(&settings, input),
        Command::Compare { dir } => commands::compare(&settings, dir),
        Command::Validate => commands::validate(&settings),
        Command::Fixtures => commands::fixtures(&settings),
        Command::Probe { image, questions } => commands::probe(&settings, image, questions.as_deref()),
    }
}
