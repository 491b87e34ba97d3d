use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdr_explore_cli::{cmd_baselines, cmd_run, cmd_verify, CommandOptions};

#[derive(Parser)]
#[command(name = "fdr-explore", version, about = "Iterative prediction and data collection with FDR-bounded exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the enabled algorithm variants.
    Run(Args),
    /// Run the opt-offline and fair-clf baselines and merge imported tables.
    Baselines(Args),
    /// Run the brute-force checks on the shipped fixtures.
    Verify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `algorithm.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for repetitions.
    #[arg(long)]
    workers: Option<usize>,
}

impl From<Args> for CommandOptions {
    fn from(a: Args) -> Self {
        CommandOptions { config: a.config, out: a.out, seed: a.seed, workers: a.workers }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a.into()),
        Command::Baselines(a) => cmd_baselines(&a.into()),
        Command::Verify(a) => cmd_verify(&a.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
