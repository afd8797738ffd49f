use std::path::Path;

use rayon::prelude::*;
use serde_json::json;
use shiftlab_core::selection::{hyperparam_select_from_tables, minmax_from_table, robust_loss, AdversaryRecord};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::fsutil::write_csv_atomic;
use crate::metrics::{row, METRICS_HEADER};
use crate::runlog::RunLog;
use crate::train_cmd::{run_train, summary_json, TrainArtifacts};

/// One row of the ranked sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub point: usize,
    pub assignment: Vec<(String, String)>,
    /// `None` for failed runs.
    pub rank: Option<usize>,
    pub checkpoint: Option<usize>,
    /// Worst case over the adversary records pooled from every surviving run.
    pub pooled_robust_loss: Option<f64>,
    pub test_robust_accuracy: Option<f64>,
    pub test_average_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Grid point chosen by hyper-parameter selection.
    pub winner: Option<usize>,
}

fn point_dir(out: &Path, i: usize) -> std::path::PathBuf {
    out.join(format!("point_{i:03}"))
}

fn describe(assign: &[(String, String)]) -> String {
    assign.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Runs every grid point of `cfg` as an independent training run (in
/// parallel when `threads` allows), then ranks the runs by hyper-parameter
/// selection over the pooled adversary records.
pub fn run_sweep(cfg: &RunConfig, seed: u64, out: &Path) -> Result<SweepReport> {
    std::fs::create_dir_all(out)?;
    let grid = cfg.grid()?;
    let threads: usize = cfg.get("threads")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrainArtifacts>> =
        pool.install(|| grid.par_iter().enumerate().map(|(i, (_, c))| run_train(c, seed, &point_dir(out, i))).collect());

    let mut log = RunLog::create(out.join("run.jsonl"))?;
    log.record(&json!({"kind": "config", "command": "sweep", "seed": seed, "config": cfg.to_text(), "points": grid.len()}))?;

    let survivors: Vec<(usize, &TrainArtifacts)> =
        results.iter().enumerate().filter_map(|(i, r)| r.as_ref().ok().map(|a| (i, a))).collect();
    if let Some((_, first)) = survivors.first() {
        if survivors.iter().any(|(_, a)| a.splits.valid != first.splits.valid) {
            return Err(HarnessError::Invalid("sweep axes must not change the validation data".into()));
        }
    }
    let tables: Vec<Vec<Vec<f64>>> = survivors.iter().map(|(_, a)| a.loss_table.clone()).collect();
    let records: Vec<Vec<AdversaryRecord<f64>>> = survivors.iter().map(|(_, a)| a.outcome.records.clone()).collect();
    let kl_threshold = survivors.first().map_or(0.0, |(_, a)| a.train_config.kl_threshold);
    let pooled: Vec<AdversaryRecord<f64>> = records.iter().flatten().cloned().collect();

    let mut scored = Vec::with_capacity(survivors.len());
    for (k, (i, _)) in survivors.iter().enumerate() {
        let own = minmax_from_table(&tables[k], &records[k], kl_threshold)?;
        let v = robust_loss(&tables[k][own.index], &pooled, kl_threshold)?;
        scored.push((*i, own.index, v));
    }
    let winner = if survivors.is_empty() {
        None
    } else {
        let choice = hyperparam_select_from_tables(&tables, &records, kl_threshold)?;
        Some(survivors[choice.run].0)
    };
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].2.total_cmp(&scored[b].2).then(scored[a].0.cmp(&scored[b].0)));

    let mut entries: Vec<SweepEntry> = grid
        .iter()
        .enumerate()
        .map(|(i, (assign, _))| SweepEntry {
            point: i,
            assignment: assign.clone(),
            rank: None,
            checkpoint: None,
            pooled_robust_loss: None,
            test_robust_accuracy: None,
            test_average_accuracy: None,
            error: results[i].as_ref().err().map(|e| e.to_string()),
        })
        .collect();
    for (rank, &k) in order.iter().enumerate() {
        let (i, ckpt, v) = scored[k];
        let a = survivors[k].1;
        let e = &mut entries[i];
        e.rank = Some(rank + 1);
        e.checkpoint = Some(ckpt);
        e.pooled_robust_loss = Some(v);
        e.test_robust_accuracy = Some(a.test_metrics.robust_accuracy);
        e.test_average_accuracy = Some(a.test_metrics.average_accuracy);
    }

    for (i, e) in entries.iter().enumerate() {
        let status = match (&e.error, &results[i]) {
            (Some(err), _) => json!({"kind": "point", "point": i, "assignment": describe(&e.assignment), "error": err}),
            (None, Ok(a)) => json!({
                "kind": "point",
                "point": i,
                "assignment": describe(&e.assignment),
                "rank": e.rank,
                "pooled_robust_loss": e.pooled_robust_loss,
                "run": summary_json(a),
            }),
            (None, Err(_)) => unreachable!("errors are recorded on the entry"),
        };
        log.record(&status)?;
    }

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut ranked: Vec<&SweepEntry> = entries.iter().collect();
    ranked.sort_by_key(|e| (e.rank.unwrap_or(usize::MAX), e.point));
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .map(|e| {
            vec![
                e.rank.map(|r| r.to_string()).unwrap_or_default(),
                e.point.to_string(),
                describe(&e.assignment),
                e.checkpoint.map(|c| c.to_string()).unwrap_or_default(),
                opt(e.pooled_robust_loss),
                opt(e.test_robust_accuracy),
                opt(e.test_average_accuracy),
                u8::from(Some(e.point) == winner).to_string(),
                e.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv_atomic(
        out.join("sweep.csv"),
        &[
            "rank",
            "point",
            "assignment",
            "checkpoint",
            "pooled_robust_loss",
            "test_robust_accuracy",
            "test_average_accuracy",
            "selected",
            "error",
        ],
        &rows,
    )?;
    let plot: Vec<Vec<String>> = entries
        .iter()
        .filter(|e| e.rank.is_some())
        .map(|e| {
            vec![describe(&e.assignment), opt(e.pooled_robust_loss), opt(e.test_robust_accuracy), opt(e.test_average_accuracy)]
        })
        .collect();
    write_csv_atomic(
        out.join("plotdata_sweep.csv"),
        &["assignment", "pooled_robust_loss", "test_robust_accuracy", "test_average_accuracy"],
        &plot,
    )?;
    let mut metric_rows = vec![
        row("sweep", "points", None, grid.len() as f64),
        row("sweep", "failed", None, (grid.len() - survivors.len()) as f64),
    ];
    if let Some(w) = winner {
        let e = &entries[w];
        metric_rows.push(row("sweep", "selected_point", None, w as f64));
        metric_rows.push(row("sweep", "selected_test_robust_accuracy", None, e.test_robust_accuracy.unwrap_or(f64::NAN)));
        metric_rows.push(row("sweep", "selected_test_average_accuracy", None, e.test_average_accuracy.unwrap_or(f64::NAN)));
    }
    write_csv_atomic(out.join("metrics.csv"), METRICS_HEADER, &metric_rows)?;
    log.record(&json!({"kind": "final", "selected_point": winner}))?;
    log.flush()?;
    Ok(SweepReport { entries, winner })
}
