//! Training-time reweighting: ERM, NonParam (KL ball around the empirical
//! distribution), online Group DRO, P-DRO with a Gaussian adversary and
//! R-PDRO with a parametric log-ratio network.

mod gaussian;
mod ratio;
mod weights;

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

pub use gaussian::{
    gaussian_kl_project, normalizer_update, pdro_adv_step, pdro_direct_adv_step, pdro_model_weights, GaussianAdversary,
    RunningNormalizer, WEIGHT_CLIP,
};
pub use ratio::RatioAdversary;
pub use weights::{
    group_dro_weights, kl_to_uniform, nonparam_weights, rpdro_batch_weights, rpdro_objective, rpdro_selfnorm_objective,
    RpdroObjective, SelfNormObjective, LOG10_TAU_BOUNDS,
};

use crate::datasets::GroupedDataset;
use crate::diffcore::{grad_params, losses, Example, LossKind, ModelSpec, ModelState};
use crate::error::{contract, Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    NonParam,
    GroupDro,
    Pdro,
    Rpdro,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "erm" => Self::Erm,
            "nonparam" => Self::NonParam,
            "group_dro" => Self::GroupDro,
            "pdro" => Self::Pdro,
            "rpdro" => Self::Rpdro,
            other => return Err(contract(format!("unknown method {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    BatchLevel,
    SelfNorm,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_level" => Ok(Self::BatchLevel),
            "self_norm" => Ok(Self::SelfNorm),
            other => Err(contract(format!("unknown norm mode {other:?}"))),
        }
    }
}

/// What the Gaussian adversary ascends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvObjective {
    /// Maximum-likelihood fit to the loss-tilted distribution.
    ReverseKl,
    /// The importance-weighted expected loss itself.
    Direct,
}

impl std::str::FromStr for AdvObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse_kl" => Ok(Self::ReverseKl),
            "direct" => Ok(Self::Direct),
            other => Err(contract(format!("unknown adversary objective {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroConfig {
    pub method: Method,
    pub lr: f64,
    pub tau: f64,
    pub kappa: f64,
    pub k_window: usize,
    pub adv_lr: f64,
    pub eta_group: f64,
    pub beta_selfnorm: f64,
    pub norm_mode: NormMode,
    pub adv_objective: AdvObjective,
    /// Project the Gaussian adversary back onto its KL ball after each step.
    pub project: bool,
    pub adv_steps_per_model_step: usize,
    pub adv_sigma: f64,
}

impl Default for DroConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            lr: 0.1,
            tau: 0.1,
            kappa: 1.0,
            k_window: 5,
            adv_lr: 0.1,
            eta_group: 0.01,
            beta_selfnorm: 1.0,
            norm_mode: NormMode::BatchLevel,
            adv_objective: AdvObjective::ReverseKl,
            project: true,
            adv_steps_per_model_step: 1,
            adv_sigma: 1.0,
        }
    }
}

impl DroConfig {
    pub fn with_method(method: Method) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lr, self.tau, self.kappa, self.adv_lr, self.eta_group, self.beta_selfnorm, self.adv_sigma];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(contract("dro hyper-parameters must be finite"));
        }
        if self.lr < 0.0 || self.adv_lr < 0.0 || self.eta_group < 0.0 || self.beta_selfnorm < 0.0 {
            return Err(contract("learning rates, eta_group and beta_selfnorm must be >= 0"));
        }
        if self.kappa < 0.0 {
            return Err(contract("kappa must be >= 0"));
        }
        if matches!(self.method, Method::Pdro | Method::Rpdro) && self.tau <= 0.0 {
            return Err(contract("tau must be > 0"));
        }
        if self.k_window == 0 || self.adv_steps_per_model_step == 0 {
            return Err(contract("k_window and adv_steps_per_model_step must be >= 1"));
        }
        if self.adv_sigma <= 0.0 {
            return Err(contract("adv_sigma must be > 0"));
        }
        Ok(())
    }
}

/// Mutable state carried by each method between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Adversary<T> {
    None,
    Group { weights: Vec<T> },
    Gaussian { adv: GaussianAdversary<T>, normalizer: RunningNormalizer<T> },
    Ratio(RatioAdversary<T>),
}

impl<T: Scalar> Adversary<T> {
    /// Initial state: uniform group weights, a Gaussian fit to the training
    /// inputs, or a ratio network with identity ratios.
    pub fn init(config: &DroConfig, train: &GroupedDataset<T>, model_spec: &ModelSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(match config.method {
            Method::Erm | Method::NonParam => Self::None,
            Method::GroupDro => {
                let g = train.num_groups.max(1);
                Self::Group { weights: vec![T::one() / T::from_usize_lossy(g); g] }
            }
            Method::Pdro => Self::Gaussian {
                adv: GaussianAdversary::fit(&train.examples, T::lit(config.adv_sigma))?,
                normalizer: RunningNormalizer::new(config.k_window)?,
            },
            Method::Rpdro => Self::Ratio(RatioAdversary::new(*model_spec, seed ^ 0x5eed_adf0)?),
        })
    }

    /// Per-example weights on a held-out set, normalized to mean 1, or `None`
    /// when the method has no adversary to record.
    pub fn valid_weights(&self, model: &ModelState<T>, valid: &GroupedDataset<T>, config: &DroConfig) -> Result<Option<Vec<T>>> {
        if valid.is_empty() {
            return Ok(None);
        }
        let n = T::from_usize_lossy(valid.len());
        let from_logs = |logs: Vec<T>| -> Vec<T> {
            let lse = log_sum_exp(&logs);
            logs.iter().map(|&l| (l - lse).exp() * n).collect()
        };
        Ok(match (config.method, self) {
            (Method::NonParam, _) => {
                let l = losses(model, &valid.examples, LossKind::Nll)?;
                let (w, _) = nonparam_weights(&l, T::lit(config.kappa))?;
                Some(w.into_iter().map(|x| x * n).collect())
            }
            (_, Self::None) => None,
            (_, Self::Group { weights }) => {
                let counts = valid.group_counts();
                let logs = valid
                    .examples
                    .iter()
                    .map(|e| {
                        let g = e.group_or_zero();
                        let q = weights.get(g).copied().unwrap_or_else(T::zero);
                        (q / T::from_usize_lossy(counts[g])).ln()
                    })
                    .collect();
                Some(from_logs(logs))
            }
            (_, Self::Gaussian { adv, .. }) => {
                let logs = valid
                    .examples
                    .iter()
                    .map(|e| {
                        let x = e.dense_features().ok_or_else(|| contract("gaussian adversary needs dense inputs"))?;
                        Ok(adv.log_ratio(x))
                    })
                    .collect::<Result<Vec<T>>>()?;
                Some(from_logs(logs))
            }
            (_, Self::Ratio(r)) => Some(from_logs(r.scores(&valid.examples)?)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub model: ModelState<T>,
    pub adversary: Adversary<T>,
    /// Unweighted mean training loss before the update.
    pub mean_loss: T,
    /// Per-example weights used for the model gradient.
    pub model_weights: Vec<T>,
}

/// `θ ← θ − lr·∇ mean loss`.
pub fn erm_step<T: Scalar, E: Borrow<Example<T>>>(model: &ModelState<T>, batch: &[E], lr: T) -> Result<ModelState<T>> {
    if !(lr > T::zero()) {
        return Err(contract("lr must be > 0"));
    }
    let n = T::from_usize_lossy(batch.len().max(1));
    descend(model, batch, &vec![T::one() / n; batch.len()], lr)
}

fn descend<T: Scalar, E: Borrow<Example<T>>>(model: &ModelState<T>, batch: &[E], weights: &[T], lr: T) -> Result<ModelState<T>> {
    let g = grad_params(model, batch, weights)?;
    let mut next = model.clone();
    next.apply_update(&g.values, -lr);
    if !next.is_finite() {
        return Err(Error::NonFinite("model parameters diverged".into()));
    }
    Ok(next)
}

/// Mean loss of each group present in the batch; absent groups get 0.
fn group_batch_losses<T: Scalar, E: Borrow<Example<T>>>(batch: &[E], losses: &[T], num_groups: usize) -> (Vec<T>, Vec<usize>) {
    let mut sums = vec![T::zero(); num_groups];
    let mut counts = vec![0usize; num_groups];
    for (e, &l) in batch.iter().zip(losses) {
        let g = e.borrow().group_or_zero();
        sums[g] = sums[g] + l;
        counts[g] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            *s = *s / T::from_usize_lossy(c);
        }
    }
    (sums, counts)
}

/// Adversary-side update and model-side weights for the ratio network.
fn rpdro_signals<T: Scalar>(losses: &[T], f: &[T], config: &DroConfig) -> Result<(Vec<T>, Vec<T>)> {
    let tau = T::lit(config.tau);
    match config.norm_mode {
        NormMode::BatchLevel => {
            let o = rpdro_objective(losses, f, tau)?;
            Ok((o.model_weights, o.adv_grad))
        }
        NormMode::SelfNorm => {
            let o = rpdro_selfnorm_objective(losses, f, tau, T::lit(config.beta_selfnorm))?;
            let clip = T::lit(WEIGHT_CLIP) / T::from_usize_lossy(losses.len());
            Ok((o.model_weights.into_iter().map(|w| w.min(clip)).collect(), o.adv_grad))
        }
    }
}

/// One training step of any method. For P-DRO and R-PDRO the model and the
/// adversary both read the same pre-update state.
pub fn train_step<T: Scalar, E: Borrow<Example<T>>>(
    model: &ModelState<T>,
    adversary: &Adversary<T>,
    batch: &[E],
    config: &DroConfig,
) -> Result<StepOutput<T>> {
    if batch.is_empty() {
        return Err(contract("empty batch"));
    }
    let l = losses(model, batch, LossKind::Nll)?;
    let n = T::from_usize_lossy(batch.len());
    let mean_loss = l.iter().copied().sum::<T>() / n;
    let lr = T::lit(config.lr);
    let adv_lr = T::lit(config.adv_lr);

    let (weights, adversary) = match (config.method, adversary) {
        (Method::Erm, _) => (vec![T::one() / n; batch.len()], adversary.clone()),
        (Method::NonParam, _) => (nonparam_weights(&l, T::lit(config.kappa))?.0, adversary.clone()),
        (Method::GroupDro, Adversary::Group { weights: q }) => {
            let (gl, counts) = group_batch_losses(batch, &l, q.len());
            let q = group_dro_weights(&gl, q, T::lit(config.eta_group))?;
            let w = batch
                .iter()
                .map(|e| {
                    let g = e.borrow().group_or_zero();
                    q[g] / T::from_usize_lossy(counts[g])
                })
                .collect();
            (w, Adversary::Group { weights: q })
        }
        (Method::Pdro, Adversary::Gaussian { adv, normalizer }) => {
            let r = pdro_model_weights(adv, batch)?;
            let w = r.iter().map(|&ri| ri / n).collect();
            let tau = T::lit(config.tau);
            let normalizer = match config.adv_objective {
                AdvObjective::ReverseKl => normalizer_update(normalizer.clone(), &l, tau)?,
                AdvObjective::Direct => normalizer.clone(),
            };
            let mut next = adv.clone();
            for _ in 0..config.adv_steps_per_model_step {
                next = match config.adv_objective {
                    AdvObjective::ReverseKl => pdro_adv_step(next, batch, &l, tau, &normalizer, adv_lr)?,
                    AdvObjective::Direct => pdro_direct_adv_step(next, batch, &l, adv_lr)?,
                };
                if config.project {
                    next = gaussian_kl_project(next, T::lit(config.kappa))?;
                }
            }
            (w, Adversary::Gaussian { adv: next, normalizer })
        }
        (Method::Rpdro, Adversary::Ratio(r)) => {
            let f = r.scores(batch)?;
            let (w, signal) = rpdro_signals(&l, &f, config)?;
            let mut next = r.clone();
            next.ascend(batch, &signal, adv_lr)?;
            for _ in 1..config.adv_steps_per_model_step {
                let f = next.scores(batch)?;
                let (_, signal) = rpdro_signals(&l, &f, config)?;
                next.ascend(batch, &signal, adv_lr)?;
            }
            (w, Adversary::Ratio(next))
        }
        (m, _) => return Err(contract(format!("adversary state does not match method {m:?}"))),
    };

    let model = if config.lr > 0.0 { descend(model, batch, &weights, lr)? } else { model.clone() };
    Ok(StepOutput { model, adversary, mean_loss, model_weights: weights })
}

/// Simultaneous model descent and adversary ascent from the same
/// pre-update parameters on the same batch.
pub fn simultaneous_step<T: Scalar, E: Borrow<Example<T>>>(
    model: &ModelState<T>,
    adversary: &Adversary<T>,
    batch: &[E],
    config: &DroConfig,
) -> Result<(ModelState<T>, Adversary<T>)> {
    if !matches!(config.method, Method::Pdro | Method::Rpdro) {
        return Err(contract("simultaneous_step needs method pdro or rpdro"));
    }
    let out = train_step(model, adversary, batch, config)?;
    Ok((out.model, out.adversary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_two_domain_gaussian, TwoDomainSpec};

    fn toy() -> GroupedDataset<f64> {
        gen_two_domain_gaussian(&TwoDomainSpec { total_points: 200, seed: 4, ..Default::default() }).unwrap()
    }

    #[test]
    fn erm_zero_gradient_keeps_model() {
        let spec = ModelSpec::linear(2, 2);
        let m = ModelState::<f64>::zeros(spec).unwrap();
        let e = Example::dense(vec![0.0, 0.0], 0, None, 0);
        let f = Example::dense(vec![0.0, 0.0], 1, None, 1);
        let next = erm_step(&m, &[&e, &f], 0.5).unwrap();
        assert_eq!(next.params(), m.params());
    }

    #[test]
    fn first_pdro_step_equals_erm() {
        let ds = toy();
        let spec = ModelSpec::mlp(2, 4, 2);
        let m = ModelState::<f64>::init(spec, 1).unwrap();
        let cfg = DroConfig { method: Method::Pdro, ..DroConfig::default() };
        let adv = Adversary::init(&cfg, &ds, &spec, 1).unwrap();
        let batch = ds.select(&(0..32).collect::<Vec<_>>());
        let (p, _) = simultaneous_step(&m, &adv, &batch, &cfg).unwrap();
        let e = erm_step(&m, &batch, 0.1).unwrap();
        assert_eq!(p.params(), e.params());
    }

    #[test]
    fn first_rpdro_step_equals_erm() {
        let ds = toy();
        let spec = ModelSpec::linear(2, 2);
        let m = ModelState::<f64>::init(spec, 3).unwrap();
        let cfg = DroConfig { method: Method::Rpdro, ..DroConfig::default() };
        let adv = Adversary::init(&cfg, &ds, &spec, 3).unwrap();
        let batch = ds.select(&(10..42).collect::<Vec<_>>());
        let (p, _) = simultaneous_step(&m, &adv, &batch, &cfg).unwrap();
        let e = erm_step(&m, &batch, 0.1).unwrap();
        for (a, b) in p.params().iter().zip(e.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn simultaneous_step_rejects_erm() {
        let ds = toy();
        let spec = ModelSpec::linear(2, 2);
        let m = ModelState::<f64>::zeros(spec).unwrap();
        let cfg = DroConfig::default();
        let adv = Adversary::init(&cfg, &ds, &spec, 0).unwrap();
        assert!(simultaneous_step(&m, &adv, &ds.select(&[0, 1]), &cfg).is_err());
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("group_dro".parse::<Method>().unwrap(), Method::GroupDro);
        assert!("cvar".parse::<Method>().is_err());
        assert_eq!("self_norm".parse::<NormMode>().unwrap(), NormMode::SelfNorm);
    }
}
