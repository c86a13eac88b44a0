//! Command-line front end and reproducible experiment recipes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod args;
mod commands;
pub mod desk;
pub mod manifest;
pub mod recipes;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embedder::EmbedderError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::tokenizer::TokenizerError;
use crate::trainer::TrainerError;

pub use args::{Cli, Command};
pub use commands::{run_command, run_command_to};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<CliError> },
    #[error("stage {stage} failed: {source}")]
    StageFailed { stage: usize, source: Box<CliError> },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::NonFiniteLoss => 3,
        _ => 2,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Context { source, .. } | CliError::StageFailed { source, .. } => source.exit_code(),
            CliError::Model(e) => model_code(e),
            CliError::Trainer(TrainerError::DivergedLoss { .. }) => 3,
            CliError::Trainer(TrainerError::Model(e)) => model_code(e),
            CliError::Trainer(TrainerError::InvalidConfig(_)) => 1,
            CliError::Metrics(MetricsError::Model(e)) => model_code(e),
            _ => 2,
        }
    }

    pub fn context(self, context: impl Into<String>) -> CliError {
        CliError::Context { context: context.into(), source: Box::new(self) }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, S>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_to(argv, &mut std::io::stdout().lock())
}

/// Like [`run`], with the command summary written to `stdout`.
pub fn run_to<I, S>(argv: I, stdout: &mut dyn std::io::Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    run_command_to(&cli.command, stdout)
}
