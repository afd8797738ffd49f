use std::path::Path;

use serde_json::{json, Value};
use shiftlab_core::datasets::{group_metrics, GroupMetrics};
use shiftlab_core::diffcore::{LossKind, ModelSpec};
use shiftlab_core::selection::valid_losses;
use shiftlab_core::train::{train_run_with, StepEvent, TrainConfig, TrainOutcome};
use shiftlab_core::Dataset;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::fsutil::write_csv_atomic;
use crate::metrics::{group_rows, METRICS_HEADER};
use crate::modelio::save_model;
use crate::runlog::RunLog;
use crate::setup::{build_splits, model_spec, train_config, Splits};

/// Everything a finished training run leaves behind in memory.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome<f64>,
    pub splits: Splits,
    pub spec: ModelSpec,
    pub train_config: TrainConfig,
    /// `loss_table[checkpoint]` on the validation set, in the selection loss.
    pub loss_table: Vec<Vec<f64>>,
    pub valid_metrics: GroupMetrics,
    pub test_metrics: GroupMetrics,
}

pub fn run_train(cfg: &RunConfig, seed: u64, out: &Path) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out)?;
    let splits = build_splits(cfg, seed)?;
    let spec = model_spec(cfg, &splits)?;
    let tc = train_config(cfg, seed)?;
    let log_every: usize = cfg.get::<usize>("log_every")?.max(1);
    let checkpoint_every: usize = cfg.get("checkpoint_every")?;

    let mut log = RunLog::create(out.join("run.jsonl"))?;
    log.record(&json!({
        "kind": "config",
        "command": "train",
        "seed": seed,
        "config": cfg.resolved(),
        "selection": tc.selection,
        "selection_loss": tc.selection_loss,
        "kl_threshold": tc.kl_threshold,
        "model": spec,
        "train_size": splits.train.len(),
        "valid_size": splits.valid.len(),
        "test_size": splits.test.len(),
    }))?;

    let mut steps: Vec<StepEvent> = Vec::new();
    let mut log_error = None;
    let outcome = train_run_with(&splits.train, &splits.valid, &spec, &tc, |e| {
        if e.step % log_every == 0 && log_error.is_none() {
            let rec = json!({
                "kind": "step",
                "split": "train",
                "epoch": e.epoch,
                "step": e.step,
                "loss": e.loss,
                "weights": {"min": e.weight_min, "max": e.weight_max, "sum": e.weight_sum},
            });
            if let Err(err) = log.record(&rec) {
                log_error = Some(err);
            }
        }
        steps.push(e.clone());
    })?;
    if let Some(err) = log_error {
        return Err(err);
    }

    let mut loss_table = Vec::with_capacity(outcome.checkpoints.len());
    for (i, (ckpt, rec)) in outcome.checkpoints.iter().zip(&outcome.epochs).enumerate() {
        let losses = valid_losses(ckpt, &splits.valid, tc.selection_loss)?;
        log.record(&json!({
            "kind": "epoch",
            "split": "valid",
            "epoch": rec.epoch,
            "train_loss": rec.train_loss,
            "valid_robust_accuracy": rec.valid.robust_accuracy,
            "valid_average_accuracy": rec.valid.average_accuracy,
            "valid_group_accuracy": rec.valid.per_group_accuracy,
            "valid_losses": losses,
            "adversary_kl": rec.adversary_kl,
            "adversary_weights": rec.adversary_weights,
        }))?;
        if checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 {
            save_model(out.join(format!("checkpoint_{:03}.bin", rec.epoch)), ckpt, seed, "train")?;
        }
        loss_table.push(losses);
    }

    if let Some(reason) = &outcome.diverged {
        log.record(&json!({"kind": "aborted", "reason": reason, "completed_epochs": outcome.epochs.len()}))?;
        log.flush()?;
        return Err(HarnessError::Diverged(reason.clone()));
    }

    let valid_metrics = group_metrics(&outcome.model, &splits.valid)?;
    let test_metrics = group_metrics(&outcome.model, &splits.test)?;
    save_model(out.join("model.bin"), &outcome.model, seed, "train")?;
    write_step_plot(out, &steps)?;
    write_epoch_plot(out, &outcome)?;
    let mut rows = group_rows("valid", &valid_metrics);
    rows.extend(group_rows("test", &test_metrics));
    rows.push(vec!["selection".into(), "checkpoint".into(), String::new(), outcome.selected.to_string()]);
    write_csv_atomic(out.join("metrics.csv"), METRICS_HEADER, &rows)?;
    log.record(&json!({
        "kind": "final",
        "selected": outcome.selected,
        "valid": valid_metrics,
        "test": test_metrics,
    }))?;
    log.flush()?;

    Ok(TrainArtifacts { outcome, splits, spec, train_config: tc, loss_table, valid_metrics, test_metrics })
}

fn write_step_plot(out: &Path, steps: &[StepEvent]) -> Result<()> {
    let rows: Vec<Vec<String>> = steps
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                s.epoch.to_string(),
                s.loss.to_string(),
                s.weight_min.to_string(),
                s.weight_max.to_string(),
                s.weight_sum.to_string(),
            ]
        })
        .collect();
    write_csv_atomic(out.join("plotdata_steps.csv"), &["step", "epoch", "loss", "weight_min", "weight_max", "weight_sum"], &rows)
}

fn write_epoch_plot(out: &Path, outcome: &TrainOutcome<f64>) -> Result<()> {
    let rows: Vec<Vec<String>> = outcome
        .epochs
        .iter()
        .enumerate()
        .map(|(i, e)| {
            vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.valid.robust_accuracy.to_string(),
                e.valid.average_accuracy.to_string(),
                e.adversary_kl.map(|k| k.to_string()).unwrap_or_default(),
                u8::from(i == outcome.selected).to_string(),
            ]
        })
        .collect();
    write_csv_atomic(
        out.join("plotdata_epochs.csv"),
        &["epoch", "train_loss", "valid_robust_accuracy", "valid_average_accuracy", "adversary_kl", "selected"],
        &rows,
    )
}

/// Validation loss table of a finished run, recomputed from its checkpoints.
pub fn loss_table(outcome: &TrainOutcome<f64>, valid: &Dataset, kind: LossKind) -> Result<Vec<Vec<f64>>> {
    outcome.checkpoints.iter().map(|m| Ok(valid_losses(m, valid, kind)?)).collect()
}

pub(crate) fn summary_json(a: &TrainArtifacts) -> Value {
    json!({
        "selected": a.outcome.selected,
        "test_robust_accuracy": a.test_metrics.robust_accuracy,
        "test_average_accuracy": a.test_metrics.average_accuracy,
    })
}
