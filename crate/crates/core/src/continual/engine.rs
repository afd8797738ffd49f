use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fisher::{conatural_delta, ewc_loss, fisher_renormalize, rolling_fisher_update, FisherState};
use super::replay::{reservoir_add, ReplayMemory};
use super::ContinualMetrics;
use crate::datasets::{batches, GroupedDataset};
use crate::diffcore::{fisher_diag, grad_params, predict, Example, ModelSpec, ModelState};
use crate::error::{contract, Error, Result};
use crate::scalar::{norm2, Scalar};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinualMethod {
    Finetune,
    Conatural,
    Ewc,
    ConaturalEwc,
    Er,
    ConaturalEr,
}

impl ContinualMethod {
    pub fn uses_conatural(self) -> bool {
        matches!(self, Self::Conatural | Self::ConaturalEwc | Self::ConaturalEr)
    }

    pub fn uses_ewc(self) -> bool {
        matches!(self, Self::Ewc | Self::ConaturalEwc)
    }

    pub fn uses_replay(self) -> bool {
        matches!(self, Self::Er | Self::ConaturalEr)
    }
}

impl std::str::FromStr for ContinualMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "finetune" => Self::Finetune,
            "conatural" => Self::Conatural,
            "ewc" => Self::Ewc,
            "conatural+ewc" | "conatural_ewc" => Self::ConaturalEwc,
            "er" => Self::Er,
            "conatural+er" | "conatural_er" => Self::ConaturalEr,
            other => return Err(contract(format!("unknown continual method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One output layer shared by every task; all parameters are regularized.
    Shared,
    /// A fresh output layer per task; only the trunk is regularized.
    PerTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub method: ContinualMethod,
    pub lr: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub ewc_lambda: f64,
    pub memory_capacity: usize,
    pub fisher_samples: usize,
    pub heads: HeadMode,
    /// Standard deviation of injected gradient noise, relative to the gradient norm.
    pub grad_noise: f64,
    pub seed: u64,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            method: ContinualMethod::Finetune,
            lr: 0.1,
            epochs_per_task: 1,
            batch_size: 32,
            alpha: 1e-3,
            gamma: 0.9,
            ewc_lambda: 1.0,
            memory_capacity: 1000,
            fisher_samples: 1000,
            heads: HeadMode::PerTask,
            grad_noise: 0.0,
            seed: 0,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(contract("lr must be > 0"));
        }
        if self.epochs_per_task == 0 || self.batch_size == 0 || self.memory_capacity == 0 || self.fisher_samples == 0 {
            return Err(contract("epochs, batch size, memory capacity and fisher samples must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(contract("gamma must lie in (0, 1]"));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 || self.ewc_lambda < 0.0 || self.grad_noise < 0.0 {
            return Err(contract("alpha, ewc_lambda and grad_noise must be >= 0"));
        }
        Ok(())
    }
}

/// One task: examples to learn from and held-out examples to score.
#[derive(Debug, Clone)]
pub struct TaskData<T> {
    pub train: GroupedDataset<T>,
    pub test: GroupedDataset<T>,
}

#[derive(Debug, Clone)]
pub struct ContinualOutcome<T> {
    pub metrics: ContinualMetrics,
    pub model: ModelState<T>,
    /// Stored output layers, one per task (empty with a shared head).
    pub heads: Vec<Vec<T>>,
    pub fisher: FisherState<T>,
    /// Tasks whose Fisher diagonal was all zero and could not be renormalized.
    pub fisher_warnings: usize,
}

pub fn accuracy<T: Scalar>(model: &ModelState<T>, data: &GroupedDataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for e in &data.examples {
        if predict(model, e)? == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

struct Heads<T> {
    range: Range<usize>,
    stored: Vec<Vec<T>>,
}

impl<T: Scalar> Heads<T> {
    fn with_head(&self, model: &ModelState<T>, task: usize) -> ModelState<T> {
        let mut m = model.clone();
        if let Some(h) = self.stored.get(task) {
            m.params_mut()[self.range.clone()].copy_from_slice(h);
        }
        m
    }
}

/// Trains `tasks` in order. After each task its Fisher is folded into the
/// rolling estimate and every task's test accuracy is recorded.
pub fn continual_train<T: Scalar>(
    tasks: &[TaskData<T>],
    spec: &ModelSpec,
    config: &ContinualConfig,
) -> Result<ContinualOutcome<T>> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(contract("continual training needs at least one task"));
    }
    let mut model = ModelState::<T>::init(*spec, config.seed)?;
    let d = model.num_params();
    let per_task = config.heads == HeadMode::PerTask;
    let trunk_end = if per_task { model.layout().head_range().start } else { d };
    if trunk_end == 0 {
        return Err(Error::UnsupportedArchitecture("per-task heads need a shared trunk".into()));
    }
    let mut heads = Heads { range: trunk_end..d, stored: Vec::new() };
    if per_task {
        for t in 0..tasks.len() {
            let fresh = ModelState::<T>::init(*spec, derive_seed(config.seed, 100 + t as u64))?;
            heads.stored.push(fresh.params()[trunk_end..].to_vec());
        }
    }

    let lr = T::lit(config.lr);
    let mut fisher = FisherState::new(trunk_end, T::lit(config.gamma), T::lit(config.alpha))?;
    let mut theta_ref: Option<Vec<T>> = None;
    let mut memory: ReplayMemory<(usize, Example<T>)> = ReplayMemory::new(config.memory_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut matrix = vec![Vec::with_capacity(tasks.len()); tasks.len()];
    let mut fisher_warnings = 0;

    for (t, task) in tasks.iter().enumerate() {
        if per_task {
            model.params_mut()[trunk_end..].copy_from_slice(&heads.stored[t]);
        }
        for epoch in 0..config.epochs_per_task {
            let order =
                batches(task.train.len(), config.batch_size, derive_seed(config.seed, ((t as u64) << 32) | epoch as u64), true)?;
            for idx in order {
                let current = task.train.select(&idx);
                let replay: Vec<(usize, Example<T>)> = if config.method.uses_replay() {
                    memory.sample(current.len(), &mut rng).into_iter().cloned().collect()
                } else {
                    Vec::new()
                };
                let w = T::one() / T::from_usize_lossy(current.len() + replay.len());
                let mut g = grad_params(&model, &current, &vec![w; current.len()])?.values;
                let mut other_heads: Vec<(usize, Vec<T>)> = Vec::new();
                for (tau, e) in &replay {
                    if per_task && *tau != t {
                        let m = heads.with_head(&model, *tau);
                        let ge = grad_params(&m, &[e], &[w])?.values;
                        for (a, b) in g[..trunk_end].iter_mut().zip(&ge[..trunk_end]) {
                            *a = *a + *b;
                        }
                        other_heads.push((*tau, ge[trunk_end..].to_vec()));
                    } else {
                        let ge = grad_params(&model, &[e], &[w])?.values;
                        for (a, b) in g.iter_mut().zip(&ge) {
                            *a = *a + *b;
                        }
                    }
                }

                let (trunk_g, head_g) = g.split_at_mut(trunk_end);
                if config.method.uses_ewc() {
                    if let Some(r) = &theta_ref {
                        let (_, eg) = ewc_loss(&model.params()[..trunk_end], r, &fisher.diag, T::lit(config.ewc_lambda))?;
                        for (a, b) in trunk_g.iter_mut().zip(eg) {
                            *a = *a + b;
                        }
                    }
                }
                if config.grad_noise > 0.0 {
                    add_noise(trunk_g, config.grad_noise, &mut rng);
                }
                let step: Vec<T> = if config.method.uses_conatural() {
                    conatural_delta(trunk_g, &fisher, lr)?
                } else {
                    trunk_g.iter().map(|&x| -lr * x).collect()
                };
                let params = model.params_mut();
                for (p, s) in params[..trunk_end].iter_mut().zip(step) {
                    *p = *p + s;
                }
                for (p, &h) in params[trunk_end..].iter_mut().zip(head_g.iter()) {
                    *p = *p - lr * h;
                }
                for (tau, hg) in other_heads {
                    for (p, h) in heads.stored[tau].iter_mut().zip(hg) {
                        *p = *p - lr * h;
                    }
                }
                if !model.is_finite() {
                    return Err(Error::NonFinite(format!("parameters diverged during task {t}")));
                }
                if config.method.uses_replay() {
                    for e in current {
                        memory = reservoir_add(memory, (t, e.clone()), &mut rng);
                    }
                }
            }
        }
        if per_task {
            heads.stored[t] = model.params()[trunk_end..].to_vec();
        }
        if config.method.uses_conatural() || config.method.uses_ewc() {
            let full = fisher_diag(&model, &task.train, config.fisher_samples, derive_seed(config.seed, 2 + t as u64))?;
            let (f, warned) = fisher_renormalize(&full[..trunk_end]);
            fisher_warnings += usize::from(warned);
            fisher = rolling_fisher_update(fisher, &f)?;
            theta_ref = Some(model.params()[..trunk_end].to_vec());
        }
        for (tau, other) in tasks.iter().enumerate() {
            let m = if per_task { heads.with_head(&model, tau) } else { model.clone() };
            matrix[tau].push(accuracy(&m, &other.test)?);
        }
    }

    Ok(ContinualOutcome {
        metrics: ContinualMetrics { accuracy_matrix: matrix, task_order: (0..tasks.len()).collect() },
        model,
        heads: heads.stored,
        fisher,
        fisher_warnings,
    })
}

/// Adds zero-mean Gaussian noise with standard deviation `rel·‖g‖`.
pub(crate) fn add_noise<T: Scalar, R: rand::Rng + ?Sized>(g: &mut [T], rel: f64, rng: &mut R) {
    let sigma = rel * norm2(g).as_f64();
    if !(sigma > 0.0) {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    for x in g.iter_mut() {
        *x = *x + T::lit(normal.sample(rng));
    }
}
