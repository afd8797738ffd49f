use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shiftlab::{dispatch, Command, RunConfig};

#[derive(Parser)]
#[command(name = "shiftlab", version, about = "Distribution-shift experiments: robust training, continual learning, attacks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/valid/test CSV files and a manifest
    GenData(Common),
    /// Train one model and select a checkpoint
    Train(Common),
    /// Run a continual-learning task sequence or the two-task toy
    Continual(Common),
    /// Perturb test inputs of a trained embed_bag model
    Attack(Common),
    /// Train every grid point and rank them by hyper-parameter selection
    Sweep(Common),
    /// Summarize run directories and replay checkpoint selection
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> shiftlab::Result<()> {
    let (command, common) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Continual(c) => (Command::Continual, c),
        Cmd::Attack(c) => (Command::Attack, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Report(c) => (Command::Report, c),
    };
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    dispatch(command, &cfg, common.seed, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
