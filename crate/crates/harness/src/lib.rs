//! Command-line harness: configuration, experiment orchestration, sweeps
//! and on-disk artifacts (`run.jsonl`, `metrics.csv`, `model.bin`,
//! `plotdata_*.csv`).

pub mod attack_cmd;
pub mod config;
pub mod continual_cmd;
mod error;
pub mod fsutil;
pub mod gen_data;
pub mod metrics;
pub mod modelio;
pub mod report;
pub mod runlog;
pub mod setup;
pub mod sweep;
pub mod train_cmd;

use std::path::Path;

pub use config::RunConfig;
pub use error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Continual,
    Attack,
    Sweep,
    Report,
}

/// Runs one command with its outputs under `out`.
pub fn dispatch(command: Command, cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    match command {
        Command::GenData => gen_data::run_gen_data(cfg, seed, out),
        Command::Train => train_cmd::run_train(cfg, seed, out).map(|_| ()),
        Command::Continual => continual_cmd::run_continual(cfg, seed, out).map(|_| ()),
        Command::Attack => attack_cmd::run_attack(cfg, seed, out).map(|_| ()),
        Command::Sweep => sweep::run_sweep(cfg, seed, out).map(|_| ()),
        Command::Report => {
            let root = if cfg.is_set("report_dir") { Path::new(cfg.raw("report_dir")) } else { out };
            report::run_report(root, out).map(|_| ())
        }
    }
}
