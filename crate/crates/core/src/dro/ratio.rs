use std::borrow::Borrow;

use crate::diffcore::{forward_logits, grad_selected_logits, Example, ModelSpec, ModelState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Label-conditioned log-ratio scorer: `f_ψ(x, y)` is the `y`-th output of a
/// classifier-shaped network. The output layer starts at zero so every
/// initial ratio is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioAdversary<T> {
    pub scorer: ModelState<T>,
}

impl<T: Scalar> RatioAdversary<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut scorer = ModelState::init(spec, seed)?;
        let head = scorer.layout().head_range();
        for p in &mut scorer.params_mut()[head] {
            *p = T::zero();
        }
        Ok(Self { scorer })
    }

    pub fn score(&self, example: &Example<T>) -> Result<T> {
        let logits = forward_logits(&self.scorer, example)?;
        let f = logits[example.label];
        if !f.is_finite() {
            return Err(Error::NonFinite("ratio adversary score".into()));
        }
        Ok(f)
    }

    pub fn scores<E: Borrow<Example<T>>>(&self, batch: &[E]) -> Result<Vec<T>> {
        batch.iter().map(|e| self.score(e.borrow())).collect()
    }

    /// Ascent step `ψ ← ψ + lr · Σᵢ cᵢ ∂fᵢ/∂ψ` for per-example signals `cᵢ`.
    pub fn ascend<E: Borrow<Example<T>>>(&mut self, batch: &[E], signal: &[T], adv_lr: T) -> Result<()> {
        let g = grad_selected_logits(&self.scorer, batch, signal)?;
        if !g.is_finite() {
            return Err(Error::NonFinite("ratio adversary gradient".into()));
        }
        self.scorer.apply_update(&g.values, adv_lr);
        Ok(())
    }
}
