//! Forward pass, per-example losses and exact backpropagation.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, BatchGradient, Example, Input, ModelState};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations<T> {
    /// Representation fed to the head (input, hidden layer or mean embedding).
    pub features: Vec<T>,
    pub logits: Vec<T>,
}

fn check_input<T: Scalar>(model: &ModelState<T>, example: &Example<T>) -> Result<()> {
    let spec = model.spec();
    if example.label >= spec.num_classes {
        return Err(Error::InputShape {
            expected: format!("label < {}", spec.num_classes),
            got: format!("label {}", example.label),
        });
    }
    match (&spec.architecture, &example.input) {
        (Architecture::Linear | Architecture::Mlp { .. }, Input::Dense(x)) => {
            if x.len() != spec.input_dim {
                return Err(Error::InputShape {
                    expected: format!("{} features", spec.input_dim),
                    got: format!("{} features", x.len()),
                });
            }
            Ok(())
        }
        (Architecture::EmbedBag { vocab_size, .. }, Input::Tokens(t)) => {
            if let Some(bad) = t.iter().find(|&&id| id as usize >= *vocab_size) {
                return Err(Error::InputShape { expected: format!("token ids < {vocab_size}"), got: format!("token id {bad}") });
            }
            Ok(())
        }
        (Architecture::EmbedBag { .. }, Input::Dense(_)) => {
            Err(Error::InputShape { expected: "token sequence".into(), got: "dense features".into() })
        }
        (_, Input::Tokens(_)) => Err(Error::InputShape { expected: "dense features".into(), got: "token sequence".into() }),
    }
}

/// `out = W · x + b` with `W` stored row-major (`out.len()` rows).
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            row.iter().zip(x).fold(bias, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect()
}

pub(crate) fn forward<T: Scalar>(model: &ModelState<T>, example: &Example<T>) -> Result<Activations<T>> {
    check_input(model, example)?;
    let spec = model.spec();
    let layout = model.layout();
    let p = model.params();
    let features = match (&spec.architecture, &example.input) {
        (Architecture::Linear, Input::Dense(x)) => x.clone(),
        (Architecture::Mlp { .. }, Input::Dense(x)) => {
            let pre = affine(&p[layout.range("hidden.weight")], &p[layout.range("hidden.bias")], x);
            pre.into_iter().map(|z| z.tanh()).collect()
        }
        (Architecture::EmbedBag { embed_dim, .. }, Input::Tokens(tokens)) => {
            let table = &p[layout.range("embedding")];
            let mut h = vec![T::zero(); *embed_dim];
            if !tokens.is_empty() {
                let inv = T::one() / T::from_usize_lossy(tokens.len());
                for &t in tokens {
                    let row = &table[t as usize * embed_dim..(t as usize + 1) * embed_dim];
                    for (hi, &ei) in h.iter_mut().zip(row) {
                        *hi = *hi + ei * inv;
                    }
                }
            }
            h
        }
        _ => unreachable!("checked by check_input"),
    };
    let (w, b) = match spec.architecture {
        Architecture::Linear => (&p[layout.range("weight")], &p[layout.range("bias")]),
        _ => (&p[layout.range("head.weight")], &p[layout.range("head.bias")]),
    };
    let logits = affine(w, b, &features);
    Ok(Activations { features, logits })
}

/// Accumulates `scale · ∂(dlogits · logits)/∂θ` into `grad`.
///
/// Returns the gradient with respect to the head's input features, which the
/// embedding-input gradient reuses.
pub(crate) fn backprop<T: Scalar>(
    model: &ModelState<T>,
    example: &Example<T>,
    act: &Activations<T>,
    dlogits: &[T],
    scale: T,
    grad: &mut [T],
) -> Vec<T> {
    let spec = model.spec();
    let layout = model.layout();
    let p = model.params();
    let (w_name, b_name) = match spec.architecture {
        Architecture::Linear => ("weight", "bias"),
        _ => ("head.weight", "head.bias"),
    };
    let w_range = layout.range(w_name);
    let b_range = layout.range(b_name);
    let f = act.features.len();
    let mut dfeat = vec![T::zero(); f];
    for (c, &dz) in dlogits.iter().enumerate() {
        let dz = dz * scale;
        if dz == T::zero() {
            continue;
        }
        grad[b_range.start + c] = grad[b_range.start + c] + dz;
        let row = w_range.start + c * f;
        for j in 0..f {
            grad[row + j] = grad[row + j] + dz * act.features[j];
            dfeat[j] = dfeat[j] + dz * p[row + j];
        }
    }
    match (&spec.architecture, &example.input) {
        (Architecture::Linear, _) => {}
        (Architecture::Mlp { .. }, Input::Dense(x)) => {
            let hw = layout.range("hidden.weight");
            let hb = layout.range("hidden.bias");
            let d = x.len();
            for (k, (&a, &da)) in act.features.iter().zip(&dfeat).enumerate() {
                let dpre = da * (T::one() - a * a);
                if dpre == T::zero() {
                    continue;
                }
                grad[hb.start + k] = grad[hb.start + k] + dpre;
                for j in 0..d {
                    grad[hw.start + k * d + j] = grad[hw.start + k * d + j] + dpre * x[j];
                }
            }
        }
        (Architecture::EmbedBag { embed_dim, .. }, Input::Tokens(tokens)) => {
            if !tokens.is_empty() {
                let er = layout.range("embedding");
                let inv = T::one() / T::from_usize_lossy(tokens.len());
                for &t in tokens {
                    let base = er.start + t as usize * embed_dim;
                    for j in 0..*embed_dim {
                        grad[base + j] = grad[base + j] + dfeat[j] * inv;
                    }
                }
            }
        }
        _ => unreachable!("validated in forward"),
    }
    dfeat
}

pub fn forward_logits<T: Scalar>(model: &ModelState<T>, example: &Example<T>) -> Result<Vec<T>> {
    Ok(forward(model, example)?.logits)
}

/// Softmax negative log-likelihood of the example's label.
pub fn nll_loss<T: Scalar>(model: &ModelState<T>, example: &Example<T>) -> Result<T> {
    let logits = forward_logits(model, example)?;
    Ok(nll_from_logits(&logits, example.label))
}

pub fn nll_from_logits<T: Scalar>(logits: &[T], label: usize) -> T {
    // Clamp round-off so the loss is never reported as a tiny negative.
    (log_sum_exp(logits) - logits[label]).max(T::zero())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict<T: Scalar>(model: &ModelState<T>, example: &Example<T>) -> Result<usize> {
    Ok(argmax(&forward_logits(model, example)?))
}

pub fn zero_one_loss<T: Scalar>(model: &ModelState<T>, example: &Example<T>) -> Result<u8> {
    Ok(u8::from(predict(model, example)? != example.label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    ZeroOne,
}

pub fn example_loss<T: Scalar>(model: &ModelState<T>, example: &Example<T>, kind: LossKind) -> Result<T> {
    match kind {
        LossKind::Nll => nll_loss(model, example),
        LossKind::ZeroOne => Ok(T::from_u8(zero_one_loss(model, example)?).unwrap()),
    }
}

pub fn losses<T: Scalar, E: Borrow<Example<T>>>(model: &ModelState<T>, batch: &[E], kind: LossKind) -> Result<Vec<T>> {
    batch.iter().map(|e| example_loss(model, e.borrow(), kind)).collect()
}

/// `∂ nll / ∂ logits = softmax(logits) − onehot(label)`.
pub(crate) fn nll_logit_grad<T: Scalar>(logits: &[T], label: usize) -> Vec<T> {
    let mut g = crate::scalar::softmax(logits);
    g[label] = g[label] - T::one();
    g
}

/// Exact gradient of `Σᵢ weightsᵢ · nll(xᵢ, yᵢ)` by backpropagation.
pub fn grad_params<T: Scalar, E: Borrow<Example<T>>>(
    model: &ModelState<T>,
    batch: &[E],
    weights: &[T],
) -> Result<BatchGradient<T>> {
    if weights.len() != batch.len() {
        return Err(Error::Contract(format!("{} weights for a batch of {}", weights.len(), batch.len())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Contract("weights must be finite".into()));
    }
    let mut grad = BatchGradient::zeros(model.num_params());
    for (e, &w) in batch.iter().zip(weights) {
        let e = e.borrow();
        let act = forward(model, e)?;
        if w == T::zero() {
            continue;
        }
        let dlogits = nll_logit_grad(&act.logits, e.label);
        backprop(model, e, &act, &dlogits, w, &mut grad.values);
    }
    Ok(grad)
}

/// Gradient of `Σᵢ coefᵢ · logits(xᵢ)[yᵢ]`, the selected-logit objective used
/// by label-conditioned scorers.
pub fn grad_selected_logits<T: Scalar, E: Borrow<Example<T>>>(
    model: &ModelState<T>,
    batch: &[E],
    coefs: &[T],
) -> Result<BatchGradient<T>> {
    if coefs.len() != batch.len() {
        return Err(Error::Contract("one coefficient per example required".into()));
    }
    let mut grad = BatchGradient::zeros(model.num_params());
    let c = model.spec().num_classes;
    for (e, &coef) in batch.iter().zip(coefs) {
        let e = e.borrow();
        if coef == T::zero() {
            continue;
        }
        let act = forward(model, e)?;
        let mut dlogits = vec![T::zero(); c];
        dlogits[e.label] = T::one();
        backprop(model, e, &act, &dlogits, coef, &mut grad.values);
    }
    Ok(grad)
}
