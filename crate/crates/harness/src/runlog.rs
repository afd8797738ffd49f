//! `run.jsonl`: one JSON object per line, tagged by `kind`.
//!
//! A training run writes `config`, then `step` records while training, then
//! one `epoch` record per checkpoint (validation losses and adversary
//! weights included, so selection can be replayed), then `final`. A run that
//! stops on a non-finite value writes `aborted` instead of `final`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;
use shiftlab_core::selection::{minmax_from_table, robust_loss, AdversaryRecord};

use crate::error::{HarnessError, Result};

pub struct RunLog {
    writer: BufWriter<File>,
}

impl RunLog {
    /// Opens `path` for appending.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { writer: BufWriter::new(file) })
    }

    /// Starts a fresh log at `path`.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self { writer: BufWriter::new(File::create(path)?) })
    }

    pub fn record(&mut self, value: &Value) -> Result<()> {
        serde_json::to_writer(&mut self.writer, value)?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

impl Drop for RunLog {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<Value>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn floats(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| HarnessError::Invalid(format!("{what} is not an array")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| HarnessError::Invalid(format!("{what} holds a non-number"))))
        .collect()
}

/// Re-runs checkpoint selection from the `epoch` records of a log and
/// returns the chosen checkpoint index.
pub fn replay_selection(records: &[Value]) -> Result<usize> {
    let config =
        records.iter().find(|r| r["kind"] == "config").ok_or_else(|| HarnessError::Invalid("log has no config record".into()))?;
    let selection = config["selection"].as_str().unwrap_or("minmax").to_string();
    let kl_threshold =
        config["kl_threshold"].as_f64().ok_or_else(|| HarnessError::Invalid("config record lacks kl_threshold".into()))?;
    let epochs: Vec<&Value> = records.iter().filter(|r| r["kind"] == "epoch").collect();
    if epochs.is_empty() {
        return Err(HarnessError::Invalid("log has no epoch records".into()));
    }
    let mut table = Vec::with_capacity(epochs.len());
    let mut new_records: Vec<Option<Vec<f64>>> = Vec::with_capacity(epochs.len());
    for e in &epochs {
        table.push(floats(&e["valid_losses"], "valid_losses")?);
        new_records.push(match &e["adversary_weights"] {
            Value::Null => None,
            w => Some(floats(w, "adversary_weights")?),
        });
    }
    let n = table[0].len();
    let mut all = vec![AdversaryRecord::uniform(0, n)];
    match selection.as_str() {
        "last" => Ok(epochs.len() - 1),
        "oracle" => {
            let mut best = 0;
            let acc = |i: usize| epochs[i]["valid_robust_accuracy"].as_f64().unwrap_or(f64::NEG_INFINITY);
            for i in 1..epochs.len() {
                if acc(i) > acc(best) {
                    best = i;
                }
            }
            Ok(best)
        }
        "minmax" => {
            for w in new_records.into_iter().flatten() {
                let id = all.len();
                all.push(AdversaryRecord::new(id, w)?);
            }
            Ok(minmax_from_table(&table, &all, kl_threshold)?.index)
        }
        "greedy_minmax" => {
            let mut best: Option<usize> = None;
            for (i, w) in new_records.into_iter().enumerate() {
                if let Some(w) = w {
                    let id = all.len();
                    all.push(AdversaryRecord::new(id, w)?);
                }
                let replace = match best {
                    None => true,
                    Some(b) => robust_loss(&table[i], &all, kl_threshold)? < robust_loss(&table[b], &all, kl_threshold)?,
                };
                if replace {
                    best = Some(i);
                }
            }
            Ok(best.expect("at least one epoch"))
        }
        other => Err(HarnessError::Invalid(format!("unknown selection {other:?} in log"))),
    }
}
