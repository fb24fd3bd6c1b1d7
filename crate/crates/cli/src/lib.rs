//! Command-line front end: `fit`, `simulate` and `combine`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use args::{Cli, Command};
use config::CommandKind;
pub use error::{CliError, CliResult};

/// Resolves the configuration and runs the chosen subcommand, returning the
/// stdout summary lines.
pub fn run(cli: &Cli) -> CliResult<Vec<String>> {
    match &cli.command {
        Command::Fit(a) => {
            let cfg = config::load(CommandKind::Fit, a.solve.config.as_deref(), &a.overrides())?;
            commands::cmd_fit(&cfg)
        }
        Command::Simulate(a) => {
            let cfg = config::load(CommandKind::Simulate, a.solve.config.as_deref(), &a.overrides())?;
            commands::cmd_simulate(&cfg)
        }
        Command::Combine(a) => {
            let cfg = config::load(CommandKind::Combine, a.config.as_deref(), &a.overrides())?;
            commands::cmd_combine(&cfg)
        }
    }
}
