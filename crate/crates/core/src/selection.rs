//! Checkpoint and hyper-parameter selection by worst case over recorded
//! adversaries, with a KL filter on the adversaries themselves.

use crate::datasets::GroupedDataset;
use crate::diffcore::{losses, LossKind, ModelState};
use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Default threshold on an adversary's validation KL: `ln 10`.
pub fn default_kl_threshold() -> f64 {
    10f64.ln()
}

/// One adversary summarized by its weights on the validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryRecord<T> {
    pub id: usize,
    pub valid_weights: Vec<T>,
    pub kl_estimate: T,
}

impl<T: Scalar> AdversaryRecord<T> {
    /// Rescales nonnegative weights to mean 1 and estimates their KL.
    pub fn new(id: usize, weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(contract("adversary record needs at least one weight"));
        }
        if weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
            return Err(contract("adversary weights must be finite and nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(contract("adversary weights sum to zero"));
        }
        let n = T::from_usize_lossy(weights.len());
        let valid_weights: Vec<T> = weights.into_iter().map(|w| w * n / total).collect();
        let kl_estimate = adversary_valid_kl(&valid_weights)?;
        Ok(Self { id, valid_weights, kl_estimate })
    }

    /// The record of the initial adversary: all weights 1, KL 0.
    pub fn uniform(id: usize, n: usize) -> Self {
        Self { id, valid_weights: vec![T::one(); n], kl_estimate: T::zero() }
    }

    pub fn survives(&self, kl_threshold: T) -> bool {
        self.kl_estimate <= kl_threshold
    }

    /// `(1/n)·Σ wᵢ ℓᵢ`.
    pub fn weighted_loss(&self, valid_losses: &[T]) -> T {
        let n = T::from_usize_lossy(valid_losses.len().max(1));
        self.valid_weights.iter().zip(valid_losses).map(|(&w, &l)| w * l).sum::<T>() / n
    }
}

/// `(1/n)·Σ wᵢ log wᵢ` with `0·log 0 = 0`.
pub fn adversary_valid_kl<T: Scalar>(weights: &[T]) -> Result<T> {
    if weights.iter().any(|&w| w < T::zero()) {
        return Err(contract("negative adversary weight"));
    }
    let n = T::from_usize_lossy(weights.len().max(1));
    Ok(weights.iter().filter(|&&w| w > T::zero()).map(|&w| w * w.ln()).sum::<T>() / n)
}

/// Worst weighted loss over the records that pass the KL filter.
pub fn robust_loss<T: Scalar>(valid_losses: &[T], records: &[AdversaryRecord<T>], kl_threshold: T) -> Result<T> {
    records
        .iter()
        .filter(|r| r.survives(kl_threshold))
        .map(|r| {
            if r.valid_weights.len() != valid_losses.len() {
                return Err(contract("record and validation set sizes differ"));
            }
            Ok(r.weighted_loss(valid_losses))
        })
        .try_fold(None, |acc: Option<T>, v| v.map(|v| Some(acc.map_or(v, |a: T| a.max(v)))))?
        .ok_or_else(|| contract("no adversary record survives the KL filter"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice<T> {
    pub index: usize,
    pub robust_loss: T,
}

/// Min over rows of `loss_table` (one row of validation losses per
/// checkpoint) of the max over surviving records. Ties go to the earlier row.
pub fn minmax_from_table<T: Scalar>(loss_table: &[Vec<T>], records: &[AdversaryRecord<T>], kl_threshold: T) -> Result<Choice<T>> {
    let mut best: Option<Choice<T>> = None;
    for (index, row) in loss_table.iter().enumerate() {
        let v = robust_loss(row, records, kl_threshold)?;
        if best.is_none_or(|b| v < b.robust_loss) {
            best = Some(Choice { index, robust_loss: v });
        }
    }
    best.ok_or_else(|| contract("no checkpoints to select from"))
}

pub fn valid_losses<T: Scalar>(model: &ModelState<T>, valid: &GroupedDataset<T>, kind: LossKind) -> Result<Vec<T>> {
    losses(model, &valid.examples, kind)
}

/// Minmax checkpoint selection; returns the index of the chosen checkpoint.
pub fn minmax_select<T: Scalar>(
    checkpoints: &[ModelState<T>],
    records: &[AdversaryRecord<T>],
    valid: &GroupedDataset<T>,
    kl_threshold: T,
    loss_kind: LossKind,
) -> Result<Choice<T>> {
    let table = checkpoints.iter().map(|m| valid_losses(m, valid, loss_kind)).collect::<Result<Vec<_>>>()?;
    minmax_from_table(&table, records, kl_threshold)
}

/// Greedy Minmax: one best model plus every adversary record seen so far.
#[derive(Debug, Clone)]
pub struct SelectionState<T> {
    pub best_model_id: Option<usize>,
    pub best_model: Option<ModelState<T>>,
    best_valid_losses: Vec<T>,
    pub records: Vec<AdversaryRecord<T>>,
    pub kl_threshold: T,
    pub loss_kind: LossKind,
}

impl<T: Scalar> SelectionState<T> {
    /// Starts with the uniform record over a validation set of `valid_len`.
    pub fn new(valid_len: usize, kl_threshold: T, loss_kind: LossKind) -> Self {
        Self {
            best_model_id: None,
            best_model: None,
            best_valid_losses: Vec::new(),
            records: vec![AdversaryRecord::uniform(0, valid_len)],
            kl_threshold,
            loss_kind,
        }
    }

    pub fn best_robust_loss(&self) -> Result<Option<T>> {
        if self.best_model.is_none() {
            return Ok(None);
        }
        robust_loss(&self.best_valid_losses, &self.records, self.kl_threshold).map(Some)
    }
}

/// Appends `new_record` (if any) and keeps `new_model` iff its worst-case
/// validation loss over all surviving records is strictly lower than the
/// stored best's.
pub fn greedy_minmax_update<T: Scalar>(
    mut state: SelectionState<T>,
    new_id: usize,
    new_model: &ModelState<T>,
    new_record: Option<AdversaryRecord<T>>,
    valid: &GroupedDataset<T>,
) -> Result<SelectionState<T>> {
    if let Some(r) = new_record {
        state.records.push(r);
    }
    let new_losses = valid_losses(new_model, valid, state.loss_kind)?;
    let replace = match state.best_robust_loss()? {
        None => true,
        Some(best) => robust_loss(&new_losses, &state.records, state.kl_threshold)? < best,
    };
    if replace {
        state.best_model_id = Some(new_id);
        state.best_model = Some(new_model.clone());
        state.best_valid_losses = new_losses;
    }
    Ok(state)
}

/// One training run's checkpoints and the adversary records it produced.
#[derive(Debug, Clone)]
pub struct RunCandidates<T> {
    pub checkpoints: Vec<ModelState<T>>,
    pub records: Vec<AdversaryRecord<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunChoice<T> {
    pub run: usize,
    pub checkpoint: usize,
    pub robust_loss: T,
}

/// Picks each run's Minmax checkpoint, then compares those candidates
/// against the union of all runs' surviving records.
pub fn hyperparam_select<T: Scalar>(
    runs: &[RunCandidates<T>],
    valid: &GroupedDataset<T>,
    kl_threshold: T,
    loss_kind: LossKind,
) -> Result<RunChoice<T>> {
    let tables = runs
        .iter()
        .map(|r| r.checkpoints.iter().map(|m| valid_losses(m, valid, loss_kind)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<Vec<AdversaryRecord<T>>> = runs.iter().map(|r| r.records.clone()).collect();
    hyperparam_select_from_tables(&tables, &records, kl_threshold)
}

/// Table form of [`hyperparam_select`]: `tables[run][checkpoint]` holds
/// validation losses.
pub fn hyperparam_select_from_tables<T: Scalar>(
    tables: &[Vec<Vec<T>>],
    records: &[Vec<AdversaryRecord<T>>],
    kl_threshold: T,
) -> Result<RunChoice<T>> {
    if tables.is_empty() || tables.len() != records.len() {
        return Err(contract("need one record list per run and at least one run"));
    }
    let pooled: Vec<AdversaryRecord<T>> = records.iter().flatten().cloned().collect();
    let mut best: Option<RunChoice<T>> = None;
    for (run, (table, own)) in tables.iter().zip(records).enumerate() {
        let own_choice = minmax_from_table(table, own, kl_threshold)?;
        let v = robust_loss(&table[own_choice.index], &pooled, kl_threshold)?;
        if best.is_none_or(|b| v < b.robust_loss) {
            best = Some(RunChoice { run, checkpoint: own_choice.index, robust_loss: v });
        }
    }
    best.ok_or_else(|| contract("no runs"))
}
