//! Gradient verification, embedding-input gradients and the empirical Fisher.

use std::borrow::Borrow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{backprop, forward, grad_params, nll_logit_grad, nll_loss};
use super::model::{Architecture, Example, Input, ModelState};
use crate::datasets::GroupedDataset;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, softmax, Scalar};

/// Largest coordinate-wise disagreement between [`grad_params`] (weights
/// `1/n`) and central differences of the mean loss. The relative error uses
/// `max(1, |analytic|)` as denominator.
pub fn finite_diff_check<T: Scalar, E: Borrow<Example<T>>>(model: &ModelState<T>, batch: &[E], step: T) -> Result<T> {
    if step <= T::zero() {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    if batch.is_empty() {
        return Ok(T::zero());
    }
    let n = T::from_usize_lossy(batch.len());
    let weights = vec![T::one() / n; batch.len()];
    let analytic = grad_params(model, batch, &weights)?;
    let mean_loss = |m: &ModelState<T>| -> Result<T> {
        let mut total = T::zero();
        for e in batch {
            total = total + nll_loss(m, e.borrow())?;
        }
        Ok(total / n)
    };
    let mut probe = model.clone();
    let two = T::lit(2.0);
    let mut worst = T::zero();
    for i in 0..model.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + step;
        let up = mean_loss(&probe)?;
        probe.params_mut()[i] = orig - step;
        let down = mean_loss(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (two * step);
        let a = analytic.values[i];
        let err = (a - numeric).abs() / a.abs().max(T::one());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Empirical diagonal Fisher: mean of squared per-example log-likelihood
/// gradients over `sample_count` draws (with replacement) from the dataset.
pub fn fisher_diag<T: Scalar>(
    model: &ModelState<T>,
    dataset: &GroupedDataset<T>,
    sample_count: usize,
    seed: u64,
) -> Result<Vec<T>> {
    if dataset.is_empty() {
        return Err(Error::Contract("fisher_diag needs a non-empty dataset".into()));
    }
    if sample_count == 0 {
        return Err(Error::Contract("sample_count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.num_params();
    let mut acc = vec![T::zero(); d];
    let mut g = vec![T::zero(); d];
    for _ in 0..sample_count {
        let e = &dataset.examples[rng.random_range(0..dataset.len())];
        g.iter_mut().for_each(|v| *v = T::zero());
        let act = forward(model, e)?;
        let dlogits = nll_logit_grad(&act.logits, e.label);
        backprop(model, e, &act, &dlogits, T::one(), &mut g);
        for (a, &gi) in acc.iter_mut().zip(&g) {
            *a = *a + gi * gi;
        }
    }
    let n = T::from_usize_lossy(sample_count);
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Objective differentiated by [`grad_wrt_embeddings`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingLoss {
    /// `−log p(y|x)`.
    Nll,
    /// `log(1 − p(y|x))`, the quantity an attacker maximizes.
    Adversarial,
}

/// `log(1 − p(y|x))` computed as `lse_{k≠y}(z) − lse(z)`.
pub fn adversarial_loss_from_logits<T: Scalar>(logits: &[T], label: usize) -> T {
    let others: Vec<T> = logits.iter().enumerate().filter(|&(k, _)| k != label).map(|(_, &z)| z).collect();
    log_sum_exp(&others) - log_sum_exp(logits)
}

pub fn embedding_loss_logit_grad<T: Scalar>(logits: &[T], label: usize, kind: EmbeddingLoss) -> Vec<T> {
    match kind {
        EmbeddingLoss::Nll => nll_logit_grad(logits, label),
        EmbeddingLoss::Adversarial => {
            let p = softmax(logits);
            let mut masked = logits.to_vec();
            masked[label] = T::neg_infinity();
            let q = softmax(&masked);
            p.iter().zip(&q).enumerate().map(|(k, (&pk, &qk))| if k == label { -pk } else { qk - pk }).collect()
        }
    }
}

/// Gradient of the chosen loss with respect to the embedding vector at each
/// input position.
pub fn grad_wrt_embeddings<T: Scalar>(model: &ModelState<T>, example: &Example<T>, kind: EmbeddingLoss) -> Result<Vec<Vec<T>>> {
    let embed_dim = match model.spec().architecture {
        Architecture::EmbedBag { embed_dim, .. } => embed_dim,
        other => return Err(Error::UnsupportedArchitecture(format!("{other:?} has no token embeddings"))),
    };
    let tokens = match &example.input {
        Input::Tokens(t) => t,
        Input::Dense(_) => return Err(Error::InputShape { expected: "token sequence".into(), got: "dense features".into() }),
    };
    let act = forward(model, example)?;
    let dlogits = embedding_loss_logit_grad(&act.logits, example.label, kind);
    let mut scratch = vec![T::zero(); model.num_params()];
    let dfeat = backprop(model, example, &act, &dlogits, T::one(), &mut scratch);
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let inv = T::one() / T::from_usize_lossy(tokens.len());
    let per_position: Vec<T> = dfeat.iter().map(|&v| v * inv).collect();
    debug_assert_eq!(per_position.len(), embed_dim);
    Ok(vec![per_position; tokens.len()])
}
