//! Epoch-based training for any reweighting method, with one checkpoint per
//! epoch and Minmax-style checkpoint selection.

use serde::{Deserialize, Serialize};

use crate::datasets::{batches, group_metrics, GroupMetrics, GroupedDataset};
use crate::diffcore::{LossKind, ModelSpec, ModelState};
use crate::dro::{train_step, Adversary, DroConfig};
use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;
use crate::seeding::derive_seed;
use crate::selection::{greedy_minmax_update, minmax_select, AdversaryRecord, SelectionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// The final checkpoint.
    Last,
    /// Minmax over all checkpoints and all recorded adversaries.
    Minmax,
    /// One-pass Minmax keeping a single best model.
    GreedyMinmax,
    /// Highest robust validation accuracy (needs group labels on validation data).
    Oracle,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "last" => Self::Last,
            "minmax" => Self::Minmax,
            "greedy_minmax" => Self::GreedyMinmax,
            "oracle" => Self::Oracle,
            other => return Err(contract(format!("unknown selection mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dro: DroConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection: SelectionMode,
    pub selection_loss: LossKind,
    pub kl_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dro: DroConfig::default(),
            epochs: 10,
            batch_size: 64,
            seed: 0,
            selection: SelectionMode::Minmax,
            selection_loss: LossKind::Nll,
            kl_threshold: crate::selection::default_kl_threshold(),
        }
    }
}

/// Emitted after every optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    pub weight_sum: f64,
}

/// Summary of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: GroupMetrics,
    /// Validation KL of this epoch's adversary, when there is one.
    pub adversary_kl: Option<f64>,
    /// Validation weights of this epoch's adversary (mean 1).
    pub adversary_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoints: Vec<ModelState<T>>,
    /// The uniform record followed by one record per adversarial checkpoint.
    pub records: Vec<AdversaryRecord<T>>,
    pub epochs: Vec<EpochRecord>,
    pub selected: usize,
    pub model: ModelState<T>,
    /// Set when training stopped on a non-finite value.
    pub diverged: Option<String>,
}

/// Trains with no per-step callback.
pub fn train_run<T: Scalar>(
    train: &GroupedDataset<T>,
    valid: &GroupedDataset<T>,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_run_with(train, valid, spec, config, |_| {})
}

pub fn train_run_with<T: Scalar>(
    train: &GroupedDataset<T>,
    valid: &GroupedDataset<T>,
    spec: &ModelSpec,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepEvent),
) -> Result<TrainOutcome<T>> {
    config.dro.validate()?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(contract("epochs and batch_size must be >= 1"));
    }
    if train.is_empty() {
        return Err(contract("empty training set"));
    }
    let mut model = ModelState::<T>::init(*spec, derive_seed(config.seed, 0))?;
    let mut adversary = Adversary::init(&config.dro, train, spec, derive_seed(config.seed, 1))?;
    let kl_threshold = T::lit(config.kl_threshold);
    let mut records = vec![AdversaryRecord::uniform(0, valid.len())];
    let mut greedy = SelectionState::new(valid.len(), kl_threshold, config.selection_loss);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut diverged = None;
    let mut step = 0usize;

    'outer: for epoch in 0..config.epochs {
        let order = batches(train.len(), config.batch_size, derive_seed(config.seed, 100 + epoch as u64), true)?;
        let mut loss_sum = 0.0;
        for idx in &order {
            let batch = train.select(idx);
            let out = match train_step(&model, &adversary, &batch, &config.dro) {
                Ok(out) => out,
                Err(Error::NonFinite(msg)) => {
                    diverged = Some(format!("epoch {epoch}, step {step}: {msg}"));
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            let loss = out.mean_loss.as_f64();
            if !loss.is_finite() {
                diverged = Some(format!("epoch {epoch}, step {step}: non-finite loss"));
                break 'outer;
            }
            let w: Vec<f64> = out.model_weights.iter().map(|w| w.as_f64()).collect();
            on_step(&StepEvent {
                epoch,
                step,
                loss,
                weight_min: w.iter().copied().fold(f64::INFINITY, f64::min),
                weight_max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                weight_sum: w.iter().sum(),
            });
            loss_sum += loss;
            step += 1;
            model = out.model;
            adversary = out.adversary;
        }

        let record = match adversary.valid_weights(&model, valid, &config.dro) {
            Ok(Some(w)) => Some(AdversaryRecord::new(records.len(), w)?),
            Ok(None) => None,
            Err(Error::NonFinite(msg)) => {
                diverged = Some(format!("epoch {epoch}, validation: {msg}"));
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        greedy = greedy_minmax_update(greedy, epoch, &model, record.clone(), valid)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len().max(1) as f64,
            valid: group_metrics(&model, valid)?,
            adversary_kl: record.as_ref().map(|r| r.kl_estimate.as_f64()),
            adversary_weights: record.as_ref().map(|r| r.valid_weights.iter().map(|w| w.as_f64()).collect()),
        });
        if let Some(r) = record {
            records.push(r);
        }
        checkpoints.push(model.clone());
    }

    if checkpoints.is_empty() {
        return Ok(TrainOutcome { checkpoints, records, epochs, selected: 0, model, diverged });
    }
    let selected = match config.selection {
        SelectionMode::Last => checkpoints.len() - 1,
        SelectionMode::Minmax => minmax_select(&checkpoints, &records, valid, kl_threshold, config.selection_loss)?.index,
        SelectionMode::GreedyMinmax => greedy.best_model_id.unwrap_or(checkpoints.len() - 1),
        SelectionMode::Oracle => {
            let mut best = 0;
            for (i, e) in epochs.iter().enumerate() {
                if e.valid.robust_accuracy > epochs[best].valid.robust_accuracy {
                    best = i;
                }
            }
            best
        }
    };
    let model = checkpoints[selected].clone();
    Ok(TrainOutcome { checkpoints, records, epochs, selected, model, diverged })
}
