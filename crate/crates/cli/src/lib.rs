//! Configuration-driven experiment runner: the four algorithm variants, the
//! comparison baselines and the brute-force verification suite, writing CSV
//! tables and a run manifest.

pub mod commands;
pub mod config;

pub use commands::{cmd_baselines, cmd_run, cmd_verify, run_variants, CommandOptions};
pub use config::{load, ExperimentConfig};

/// Failure classes of a command, mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<fdr_explore::Error> for CliError {
    fn from(e: fdr_explore::Error) -> Self {
        match e {
            fdr_explore::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.into()),
        }
    }
}
