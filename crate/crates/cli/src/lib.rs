//! Command-line pipeline: generate, train, fine-tune, score and evaluate.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{run_command, ScoreSummary};
pub use config::{Command, RunConfig, CONFIG_KEYS};
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK};

#[derive(Debug, Parser)]
#[command(
    name = "normflux",
    version,
    about = "Multi-modal VAE normative modelling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,

    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Overrides one config entry; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Seed for data generation and model training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Root directory for all outputs.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CliCommand {
    /// Write a synthetic cohort as CSV files plus provenance.
    Generate,
    /// Train a model on the healthy training cohort.
    Train,
    /// Continue training a checkpoint on a new healthy cohort.
    Finetune,
    /// Score subjects against the healthy reference cohort.
    Score,
    /// Tabulate significance ratios across score reports.
    Evaluate,
}

impl From<CliCommand> for Command {
    fn from(c: CliCommand) -> Self {
        match c {
            CliCommand::Generate => Command::Generate,
            CliCommand::Train => Command::Train,
            CliCommand::Finetune => Command::Finetune,
            CliCommand::Score => Command::Score,
            CliCommand::Evaluate => Command::Evaluate,
        }
    }
}

impl Cli {
    /// Merges the config file, `--set` overrides, `--seed` and `--out`, in that order.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut pairs = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            pairs.extend(config::parse_config_text(
                &text,
                &path.display().to_string(),
            )?);
        }
        for o in &self.overrides {
            pairs.push(config::parse_override(o)?);
        }
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            pairs.push(("out".into(), out.display().to_string()));
        }
        RunConfig::from_pairs(&pairs)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = cli
        .resolve()
        .and_then(|cfg| run_command(cli.command.into(), &cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("normflux: {e}");
            e.exit_code()
        }
    }
}
