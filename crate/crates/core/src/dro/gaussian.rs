//! Gaussian location adversary over 2-D (or any dense) inputs.

use std::borrow::Borrow;
use std::collections::VecDeque;

use crate::diffcore::Example;
use crate::error::{contract, Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Upper clip on per-example importance weights.
pub const WEIGHT_CLIP: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAdversary<T> {
    pub mean: Vec<T>,
    pub sigma: T,
    pub mean0: Vec<T>,
}

impl<T: Scalar> GaussianAdversary<T> {
    /// Adversary starting at `mean0`, so the first weights are exactly 1.
    pub fn new(mean0: Vec<T>, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || mean0.iter().any(|m| !m.is_finite()) {
            return Err(contract("gaussian adversary needs sigma > 0 and a finite mean"));
        }
        Ok(Self { mean: mean0.clone(), sigma, mean0 })
    }

    /// `ψ₀` fit by maximum likelihood: the sample mean of the inputs.
    pub fn fit<E: Borrow<Example<T>>>(data: &[E], sigma: T) -> Result<Self> {
        let first = data.first().ok_or_else(|| contract("cannot fit an adversary to no data"))?;
        let d = dense(first.borrow())?.len();
        let mut m = vec![T::zero(); d];
        for e in data {
            for (mi, &x) in m.iter_mut().zip(dense(e.borrow())?) {
                *mi = *mi + x;
            }
        }
        let n = T::from_usize_lossy(data.len());
        Self::new(m.into_iter().map(|v| v / n).collect(), sigma)
    }

    /// `log q_ψ(x) − log q_ψ₀(x)`.
    pub fn log_ratio(&self, x: &[T]) -> T {
        let (mut d0, mut d1) = (T::zero(), T::zero());
        for ((&xi, &m0), &m) in x.iter().zip(&self.mean0).zip(&self.mean) {
            d0 = d0 + (xi - m0) * (xi - m0);
            d1 = d1 + (xi - m) * (xi - m);
        }
        (d0 - d1) / (T::lit(2.0) * self.sigma * self.sigma)
    }

    pub fn distance_from_start(&self) -> T {
        self.mean.iter().zip(&self.mean0).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt()
    }
}

fn dense<T: Scalar>(e: &Example<T>) -> Result<&[T]> {
    e.dense_features().ok_or_else(|| Error::UnsupportedArchitecture("gaussian adversary needs dense inputs".into()))
}

/// Importance weights `q_ψ(xᵢ)/q_ψ₀(xᵢ)`, clipped to `[0, WEIGHT_CLIP]`.
pub fn pdro_model_weights<T: Scalar, E: Borrow<Example<T>>>(adv: &GaussianAdversary<T>, batch: &[E]) -> Result<Vec<T>> {
    let clip = T::lit(WEIGHT_CLIP);
    batch
        .iter()
        .map(|e| {
            let x = dense(e.borrow())?;
            if x.len() != adv.mean.len() {
                return Err(Error::InputShape { expected: format!("{} features", adv.mean.len()), got: format!("{}", x.len()) });
            }
            Ok(adv.log_ratio(x).exp().min(clip))
        })
        .collect()
}

/// Pooled `mean(exp(ℓ/τ))` over the last `window` batches, kept in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer<T> {
    window: usize,
    records: VecDeque<(T, usize)>,
}

impl<T: Scalar> RunningNormalizer<T> {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(contract("normalizer window must be >= 1"));
        }
        Ok(Self { window, records: VecDeque::with_capacity(window) })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `log Z̃`; `None` before the first batch.
    pub fn log_value(&self) -> Option<T> {
        if self.records.is_empty() {
            return None;
        }
        let logs: Vec<T> = self.records.iter().map(|r| r.0).collect();
        let count: usize = self.records.iter().map(|r| r.1).sum();
        Some(log_sum_exp(&logs) - T::from_usize_lossy(count).ln())
    }

    pub fn value(&self) -> Option<T> {
        self.log_value().map(T::exp)
    }
}

pub fn normalizer_update<T: Scalar>(
    mut normalizer: RunningNormalizer<T>,
    batch_losses: &[T],
    tau: T,
) -> Result<RunningNormalizer<T>> {
    if batch_losses.is_empty() {
        return Ok(normalizer);
    }
    if !(tau > T::zero()) {
        return Err(contract("tau must be > 0"));
    }
    let scaled: Vec<T> = batch_losses.iter().map(|&l| l / tau).collect();
    normalizer.records.push_back((log_sum_exp(&scaled), batch_losses.len()));
    while normalizer.records.len() > normalizer.window {
        normalizer.records.pop_front();
    }
    Ok(normalizer)
}

fn ascend<T: Scalar, E: Borrow<Example<T>>>(
    mut adv: GaussianAdversary<T>,
    batch: &[E],
    coefs: &[T],
    adv_lr: T,
) -> Result<GaussianAdversary<T>> {
    let n = T::from_usize_lossy(batch.len().max(1));
    let s2 = adv.sigma * adv.sigma;
    let mut grad = vec![T::zero(); adv.mean.len()];
    for (e, &a) in batch.iter().zip(coefs) {
        for ((g, &x), &m) in grad.iter_mut().zip(dense(e.borrow())?).zip(&adv.mean) {
            *g = *g + a * (x - m) / s2;
        }
    }
    for (m, g) in adv.mean.iter_mut().zip(grad) {
        *m = *m + adv_lr * g / n;
    }
    if adv.mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("adversary mean".into()));
    }
    Ok(adv)
}

/// Gradient ascent on `(1/n)·Σ exp(ℓᵢ/τ)/Z̃ · log q_ψ(xᵢ)`, the reverse-KL fit
/// of `q_ψ` to the tilted distribution. The normalizer should already
/// include the current batch.
pub fn pdro_adv_step<T: Scalar, E: Borrow<Example<T>>>(
    adv: GaussianAdversary<T>,
    batch: &[E],
    losses: &[T],
    tau: T,
    normalizer: &RunningNormalizer<T>,
    adv_lr: T,
) -> Result<GaussianAdversary<T>> {
    if losses.len() != batch.len() {
        return Err(contract("one loss per example required"));
    }
    if !(tau > T::zero()) {
        return Err(contract("tau must be > 0"));
    }
    let log_z = normalizer.log_value().ok_or_else(|| contract("normalizer has no records"))?;
    let coefs: Vec<T> = losses.iter().map(|&l| (l / tau - log_z).exp()).collect();
    ascend(adv, batch, &coefs, adv_lr)
}

/// Gradient ascent on the importance-sampled expected loss
/// `(1/n)·Σ rᵢ ℓᵢ` directly, with `rᵢ` the clipped ratio.
pub fn pdro_direct_adv_step<T: Scalar, E: Borrow<Example<T>>>(
    adv: GaussianAdversary<T>,
    batch: &[E],
    losses: &[T],
    adv_lr: T,
) -> Result<GaussianAdversary<T>> {
    if losses.len() != batch.len() {
        return Err(contract("one loss per example required"));
    }
    let r = pdro_model_weights(&adv, batch)?;
    let coefs: Vec<T> = r.iter().zip(losses).map(|(&ri, &l)| ri * l).collect();
    ascend(adv, batch, &coefs, adv_lr)
}

/// Projects `ψ` onto the KL ball `‖ψ − ψ₀‖ ≤ sqrt(2κ)·σ`.
pub fn gaussian_kl_project<T: Scalar>(mut adv: GaussianAdversary<T>, kappa: T) -> Result<GaussianAdversary<T>> {
    if kappa < T::zero() {
        return Err(contract("kappa must be >= 0"));
    }
    let dist = adv.distance_from_start();
    let radius = (T::lit(2.0) * kappa).sqrt() * adv.sigma;
    if dist <= radius {
        return Ok(adv);
    }
    let scale = radius / dist;
    for (m, &m0) in adv.mean.iter_mut().zip(&adv.mean0) {
        *m = m0 + scale * (*m - m0);
    }
    Ok(adv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[[f64; 2]]) -> Vec<Example<f64>> {
        xs.iter().enumerate().map(|(i, x)| Example::dense(x.to_vec(), 0, None, i as u64)).collect()
    }

    #[test]
    fn weights_are_one_at_start() {
        let adv = GaussianAdversary::new(vec![0.3, -1.2], 0.7).unwrap();
        let w = pdro_model_weights(&adv, &pts(&[[1.0, 2.0], [-4.0, 0.5], [0.0, 0.0]])).unwrap();
        assert_eq!(w, vec![1.0; 3]);
    }

    #[test]
    fn shifted_mean_upweights_its_center() {
        let mut adv = GaussianAdversary::new(vec![0.0_f64, 0.0], 1.0).unwrap();
        adv.mean = vec![1.0, 1.0];
        let w = pdro_model_weights(&adv, &pts(&[[1.0, 1.0]])).unwrap();
        assert!(w[0] > 1.0);
    }

    #[test]
    fn projection_examples() {
        let mut adv = GaussianAdversary::new(vec![0.0_f64, 0.0], 1.0).unwrap();
        adv.mean = vec![3.0, 4.0];
        let p = gaussian_kl_project(adv.clone(), 0.5).unwrap();
        assert!((p.mean[0] - 0.6).abs() < 1e-12 && (p.mean[1] - 0.8).abs() < 1e-12);
        let z = gaussian_kl_project(adv.clone(), 0.0).unwrap();
        assert_eq!(z.mean, vec![0.0, 0.0]);
        let inside = gaussian_kl_project(adv.clone(), 20.0).unwrap();
        assert_eq!(inside.mean, adv.mean);
    }

    #[test]
    fn normalizer_windows() {
        let n = normalizer_update(RunningNormalizer::new(1).unwrap(), &[0.0, 1.0], 1.0).unwrap();
        let n = normalizer_update(n, &[2.0, 2.0], 1.0).unwrap();
        assert!((n.value().unwrap() - 2f64.exp()).abs() < 1e-12);
        let mut c = RunningNormalizer::new(4).unwrap();
        for len in [3, 1, 5] {
            c = normalizer_update(c, &vec![0.4; len], 0.2).unwrap();
        }
        assert!((c.value().unwrap() - 2f64.exp()).abs() < 1e-12);
        assert!(RunningNormalizer::<f64>::new(0).is_err());
    }

    #[test]
    fn uniform_losses_move_toward_sample_mean() {
        let batch = pts(&[[2.0, 0.0], [4.0, 2.0]]);
        let adv = GaussianAdversary::new(vec![0.0, 0.0], 1.0).unwrap();
        let norm = normalizer_update(RunningNormalizer::new(1).unwrap(), &[0.5, 0.5], 1.0).unwrap();
        let next = pdro_adv_step(adv, &batch, &[0.5, 0.5], 1.0, &norm, 0.5).unwrap();
        assert!((next.mean[0] - 1.5).abs() < 1e-12 && (next.mean[1] - 0.5).abs() < 1e-12);
    }
}
