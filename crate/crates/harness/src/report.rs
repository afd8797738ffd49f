use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::fsutil::write_csv_atomic;
use crate::metrics::METRICS_HEADER;
use crate::runlog::{read_log, replay_selection};

/// One run directory found under the report root.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub command: String,
    /// Checkpoint recorded in the log's `final` block.
    pub selected: Option<usize>,
    /// Checkpoint recomputed from the log's `epoch` records.
    pub replayed: Option<usize>,
    pub aborted: bool,
}

fn run_dirs(root: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let same = std::fs::canonicalize(root).ok() == std::fs::canonicalize(out).ok();
    if !same && root.join("run.jsonl").is_file() {
        dirs.push(root.to_path_buf());
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("run.jsonl").is_file())
        .collect();
    children.sort();
    dirs.extend(children);
    Ok(dirs)
}

/// Collects every run under `root` (its immediate subdirectories, plus the
/// root itself unless it is also `out`), replays checkpoint selection for
/// training runs, and writes `report.csv` (one row per run and metric),
/// `plotdata_runs.csv` and `metrics.csv` into `out`.
pub fn run_report(root: &Path, out: &Path) -> Result<Vec<RunSummary>> {
    std::fs::create_dir_all(out)?;
    let mut summaries = Vec::new();
    let mut all_rows = Vec::new();
    for dir in run_dirs(root, out)? {
        let name = if dir == root {
            ".".to_string()
        } else {
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        };
        let log = read_log(dir.join("run.jsonl"))?;
        let command =
            log.iter().find(|r| r["kind"] == "config").and_then(|r| r["command"].as_str()).unwrap_or("unknown").to_string();
        let fin = log.iter().rev().find(|r| r["kind"] == "final");
        let aborted = log.iter().any(|r| r["kind"] == "aborted");
        let selected = fin.and_then(|f| f["selected"].as_u64()).map(|s| s as usize);
        let replayed = if command == "train" && !aborted { Some(replay_selection(&log)?) } else { None };
        summaries.push(RunSummary { name: name.clone(), command, selected, replayed, aborted });

        let metrics = dir.join("metrics.csv");
        if metrics.is_file() {
            let mut reader = csv::Reader::from_path(&metrics)?;
            for rec in reader.records() {
                let rec = rec?;
                let mut r = vec![name.clone()];
                r.extend(rec.iter().map(str::to_string));
                all_rows.push(r);
            }
        }
    }
    let mut header = vec!["run"];
    header.extend_from_slice(METRICS_HEADER);
    write_csv_atomic(out.join("report.csv"), &header, &all_rows)?;
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| vec![s.name.clone(), s.command.clone(), opt(s.selected), opt(s.replayed), u8::from(s.aborted).to_string()])
        .collect();
    write_csv_atomic(out.join("plotdata_runs.csv"), &["run", "command", "selected", "replayed", "aborted"], &rows)?;
    let consistent = summaries.iter().filter(|s| s.replayed.is_some() && s.replayed == s.selected).count();
    let replayable = summaries.iter().filter(|s| s.replayed.is_some()).count();
    write_csv_atomic(
        out.join("metrics.csv"),
        METRICS_HEADER,
        &[
            crate::metrics::row("report", "runs", None, summaries.len() as f64),
            crate::metrics::row("report", "replayable", None, replayable as f64),
            crate::metrics::row("report", "replay_consistent", None, consistent as f64),
        ],
    )?;
    Ok(summaries)
}
