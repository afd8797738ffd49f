use std::path::Path;

use serde_json::json;
use shiftlab_core::continual::{
    continual_train, gen_rotated_tasks, two_task_logistic_trajectory, ContinualConfig, ContinualMetrics, Trajectory,
};
use shiftlab_core::diffcore::ModelSpec;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::fsutil::write_csv_atomic;
use crate::metrics::{row, METRICS_HEADER};
use crate::modelio::save_model;
use crate::runlog::RunLog;
use crate::setup::{continual_config, rotated_spec, two_task_config};

#[derive(Debug, Clone, PartialEq)]
pub enum ContinualSummary {
    Sequence {
        metrics: ContinualMetrics,
        final_forgetting: f64,
        average_accuracy: f64,
        /// `(alpha, forgetting, average accuracy)` per damping value, when requested.
        damping: Vec<(f64, f64, f64)>,
    },
    TwoTask {
        finetune: Trajectory,
        conatural: Trajectory,
    },
}

pub fn run_continual(cfg: &RunConfig, seed: u64, out: &Path) -> Result<ContinualSummary> {
    std::fs::create_dir_all(out)?;
    match cfg.raw("cl_task") {
        "rotated" => run_rotated(cfg, seed, out),
        "two_task" => run_two_task(cfg, seed, out),
        other => Err(HarnessError::BadValue {
            key: "cl_task".into(),
            value: other.into(),
            reason: "expected rotated or two_task".into(),
        }),
    }
}

fn continual_model(cfg: &RunConfig, dim: usize) -> Result<ModelSpec> {
    match cfg.raw("model") {
        "" | "mlp" => Ok(ModelSpec::mlp(dim, cfg.get("hidden_units")?, 2)),
        "linear" => Ok(ModelSpec::linear(dim, 2)),
        other => Err(HarnessError::BadValue {
            key: "model".into(),
            value: other.into(),
            reason: "continual runs use linear or mlp".into(),
        }),
    }
}

fn run_rotated(cfg: &RunConfig, seed: u64, out: &Path) -> Result<ContinualSummary> {
    let task_spec = rotated_spec(cfg, seed)?;
    let tasks = gen_rotated_tasks::<f64>(&task_spec)?;
    let spec = continual_model(cfg, task_spec.dim)?;
    let cc = continual_config(cfg, seed)?;

    let mut log = RunLog::create(out.join("run.jsonl"))?;
    log.record(&json!({
        "kind": "config",
        "command": "continual",
        "seed": seed,
        "config": cfg.resolved(),
        "model": spec,
        "tasks": task_spec,
    }))?;
    let outcome = continual_train(&tasks, &spec, &cc)?;
    let m = &outcome.metrics;
    for t in 0..m.num_checkpoints() {
        let acc: Vec<f64> = m.accuracy_matrix.iter().map(|row| row[t]).collect();
        log.record(&json!({"kind": "task_end", "split": "test", "after_task": m.task_order[t], "accuracy": acc}))?;
    }
    let final_forgetting = m.final_forgetting()?;
    let average_accuracy = m.average_accuracy();

    let damping_values: Vec<f64> = cfg.list("damping_sweep")?;
    let mut damping = Vec::with_capacity(damping_values.len());
    for &alpha in &damping_values {
        let point = continual_train(&tasks, &spec, &ContinualConfig { alpha, ..cc.clone() })?;
        let f = point.metrics.final_forgetting()?;
        let a = point.metrics.average_accuracy();
        log.record(&json!({"kind": "damping", "alpha": alpha.to_string(), "forgetting": f, "average_accuracy": a}))?;
        damping.push((alpha, f, a));
    }

    save_model(out.join("model.bin"), &outcome.model, seed, "continual")?;
    let mut matrix_rows = Vec::new();
    for t in 0..m.num_checkpoints() {
        for (task, accs) in m.accuracy_matrix.iter().enumerate() {
            matrix_rows.push(vec![m.task_order[t].to_string(), task.to_string(), accs[t].to_string()]);
        }
    }
    write_csv_atomic(out.join("plotdata_accuracy.csv"), &["after_task", "task", "accuracy"], &matrix_rows)?;
    if !damping.is_empty() {
        let rows: Vec<Vec<String>> =
            damping.iter().map(|(a, f, acc)| vec![a.to_string(), f.to_string(), acc.to_string()]).collect();
        write_csv_atomic(out.join("plotdata_damping.csv"), &["alpha", "forgetting", "average_accuracy"], &rows)?;
    }
    let last = m.num_checkpoints().saturating_sub(1);
    let mut rows = vec![
        row("continual", "final_forgetting", None, final_forgetting),
        row("continual", "average_accuracy", None, average_accuracy),
        row("continual", "fisher_warnings", None, outcome.fisher_warnings as f64),
    ];
    for (task, accs) in m.accuracy_matrix.iter().enumerate() {
        rows.push(row("continual", "final_task_accuracy", Some(task), accs[last]));
    }
    write_csv_atomic(out.join("metrics.csv"), METRICS_HEADER, &rows)?;
    log.record(&json!({
        "kind": "final",
        "final_forgetting": final_forgetting,
        "average_accuracy": average_accuracy,
        "accuracy_matrix": m.accuracy_matrix,
    }))?;
    log.flush()?;
    Ok(ContinualSummary::Sequence { metrics: m.clone(), final_forgetting, average_accuracy, damping })
}

fn trajectory_rows(method: &str, t: &Trajectory) -> Vec<Vec<String>> {
    t.points
        .iter()
        .map(|p| {
            let mut r = vec![method.to_string(), p.step.to_string()];
            r.extend(p.params.iter().map(|v| v.to_string()));
            r.push(p.t1_loss.to_string());
            r.push(p.t2_loss.to_string());
            r
        })
        .collect()
}

/// The 2-D toy: finetuning and co-natural trajectories from the same start.
fn run_two_task(cfg: &RunConfig, seed: u64, out: &Path) -> Result<ContinualSummary> {
    let tc = two_task_config(cfg, seed)?;
    let mut log = RunLog::create(out.join("run.jsonl"))?;
    log.record(&json!({"kind": "config", "command": "continual", "seed": seed, "config": cfg.resolved(), "two_task": tc}))?;
    let plain = two_task_logistic_trajectory::<f64>(&tc, false)?;
    let conat = two_task_logistic_trajectory::<f64>(&tc, true)?;
    let width = plain.points.first().map_or(0, |p| p.params.len());
    let mut header: Vec<String> = vec!["method".into(), "step".into()];
    header.extend((0..width).map(|i| format!("param_{i}")));
    header.push("t1_loss".into());
    header.push("t2_loss".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = trajectory_rows("finetune", &plain);
    rows.extend(trajectory_rows("conatural", &conat));
    write_csv_atomic(out.join("plotdata_trajectory.csv"), &header_refs, &rows)?;
    let metric_rows = vec![
        row("finetune", "final_t1_loss", None, plain.final_t1_loss),
        row("finetune", "final_t2_loss", None, plain.final_t2_loss),
        row("conatural", "final_t1_loss", None, conat.final_t1_loss),
        row("conatural", "final_t2_loss", None, conat.final_t2_loss),
    ];
    write_csv_atomic(out.join("metrics.csv"), METRICS_HEADER, &metric_rows)?;
    log.record(&json!({
        "kind": "final",
        "finetune": {"t1_loss": plain.final_t1_loss, "t2_loss": plain.final_t2_loss},
        "conatural": {"t1_loss": conat.final_t1_loss, "t2_loss": conat.final_t2_loss},
    }))?;
    log.flush()?;
    Ok(ContinualSummary::TwoTask { finetune: plain, conatural: conat })
}
