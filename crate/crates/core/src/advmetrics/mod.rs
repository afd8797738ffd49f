//! Adversarial-perturbation metrics and generators: chrF, relative target
//! score decrease, attack success, CharSwap, kNN-constrained and
//! first-order token substitutions.

mod chrf;
mod perturb;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use chrf::{chrf, chrf2, normalize_whitespace};
pub use perturb::{
    char_swap_oov, char_swap_oov_with_rng, first_order_substitution, knn_candidates, CharSwapConfig, Constraint, EmbeddingTable,
};

use crate::diffcore::{
    forward_logits, grad_params, grad_wrt_embeddings, Architecture, EmbeddingLoss, Example, Input, ModelState,
};
use crate::error::{contract, Error, Result};
use crate::scalar::{softmax, Scalar};

/// Relative decrease of the target-side score, clamped at 0.
pub fn d_tgt(s_base: f64, s_adv: f64) -> Result<f64> {
    if s_base < 0.0 || s_adv < 0.0 {
        return Err(contract("scores must be nonnegative"));
    }
    if s_base == 0.0 || s_adv >= s_base {
        return Ok(0.0);
    }
    Ok((s_base - s_adv) / s_base)
}

/// `S = s_src + d_tgt`; above 1 the target lost more than the source.
pub fn success(s_src: f64, d_tgt: f64) -> f64 {
    s_src + d_tgt
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub s_src: f64,
    pub d_tgt: f64,
    pub success: f64,
}

impl ScoreTriple {
    pub fn new(s_src: f64, d_tgt: f64) -> Self {
        Self { s_src, d_tgt, success: success(s_src, d_tgt) }
    }

    pub fn is_success(&self) -> bool {
        self.success > 1.0
    }
}

/// `(1−α)·nll_orig + α·nll_adv`.
pub fn adv_training_loss<T: Scalar>(nll_orig: T, nll_adv: T, alpha: T) -> Result<T> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(contract("alpha must lie in [0, 1]"));
    }
    Ok((T::one() - alpha) * nll_orig + alpha * nll_adv)
}

/// Deterministic pronounceable pseudo-words, one per token id, each three
/// consonant-vowel syllables long.
pub fn synthetic_vocabulary(size: usize) -> Vec<String> {
    const C: &[u8] = b"bcdfghjklmnprstvwxyz";
    const V: &[u8] = b"aeiou";
    (0..size)
        .map(|i| {
            let mut n = i;
            let mut w = String::with_capacity(6);
            for _ in 0..3 {
                let s = n % (C.len() * V.len());
                n /= C.len() * V.len();
                w.push(C[s / V.len()] as char);
                w.push(V[s % V.len()] as char);
            }
            w
        })
        .collect()
}

pub fn detokenize(tokens: &[u32], words: &[String]) -> String {
    tokens.iter().map(|&t| words.get(t as usize).map_or("<unk>", String::as_str)).collect::<Vec<_>>().join(" ")
}

/// The model's embedding matrix as an [`EmbeddingTable`] over `words`.
pub fn model_embeddings<T: Scalar>(model: &ModelState<T>, words: &[String]) -> Result<EmbeddingTable<T>> {
    match model.spec().architecture {
        Architecture::EmbedBag { vocab_size, embed_dim } => {
            if words.len() != vocab_size {
                return Err(contract("vocabulary size does not match the model"));
            }
            EmbeddingTable::from_flat(model.slot_params("embedding"), embed_dim, words.to_vec())
        }
        _ => Err(Error::UnsupportedArchitecture("token attacks need an embed_bag model".into())),
    }
}

fn raw_table<T: Scalar>(model: &ModelState<T>) -> Result<EmbeddingTable<T>> {
    match model.spec().architecture {
        Architecture::EmbedBag { vocab_size, .. } => {
            model_embeddings(model, &(0..vocab_size).map(|i| i.to_string()).collect::<Vec<_>>())
        }
        _ => Err(Error::UnsupportedArchitecture("token attacks need an embed_bag model".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Replace randomly chosen words by their CharSwap OOV forms.
    CharSwap { max_scrambling: usize, unk_id: usize },
    /// Greedy first-order substitutions under a constraint.
    FirstOrder { constraint: Constraint, sign_normalize: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub tokens: Vec<u32>,
    pub text: String,
    pub s_base: f64,
    pub s_adv: f64,
    pub scores: ScoreTriple,
}

fn true_label_prob<T: Scalar>(model: &ModelState<T>, e: &Example<T>) -> Result<f64> {
    let p = softmax(&forward_logits(model, e)?);
    Ok(p[e.label].as_f64())
}

fn token_example<T: Scalar>(e: &Example<T>) -> Result<&[u32]> {
    match &e.input {
        Input::Tokens(t) => Ok(t),
        Input::Dense(_) => Err(Error::UnsupportedArchitecture("token attacks need token inputs".into())),
    }
}

/// Perturbs one example with `substitutions` edits and scores the result:
/// `s_src` is chrF between the detokenized original and perturbed texts
/// (on a 0–1 scale), and the target score is the model's probability of the
/// true label.
pub fn attack_example<T: Scalar>(
    model: &ModelState<T>,
    example: &Example<T>,
    words: &[String],
    kind: AttackKind,
    substitutions: usize,
    seed: u64,
) -> Result<AttackOutcome> {
    let table = model_embeddings(model, words)?;
    let original = token_example(example)?.to_vec();
    let mut tokens = original.clone();
    let mut text_words: Vec<String> = original.iter().map(|&t| words[t as usize].clone()).collect();
    let vocab: HashSet<String> = words.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        AttackKind::CharSwap { max_scrambling, unk_id } => {
            if unk_id >= words.len() {
                return Err(contract("unk id outside the vocabulary"));
            }
            let mut order: Vec<usize> = (0..tokens.len()).collect();
            order.shuffle(&mut rng);
            for &pos in order.iter().take(substitutions) {
                text_words[pos] = char_swap_oov_with_rng(&text_words[pos], &vocab, max_scrambling.max(1), &mut rng);
                tokens[pos] = unk_id as u32;
            }
        }
        AttackKind::FirstOrder { constraint, sign_normalize } => {
            for _ in 0..substitutions {
                let current = Example { input: Input::Tokens(tokens.clone()), ..example.clone() };
                let grads = grad_wrt_embeddings(model, &current, EmbeddingLoss::Adversarial)?;
                let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
                let (pos, w) = match first_order_substitution(&grads, &ids, &table, constraint, sign_normalize) {
                    Ok(choice) => choice,
                    Err(Error::NoCandidate) => break,
                    Err(e) => return Err(e),
                };
                text_words[pos] = match constraint {
                    Constraint::CharSwapOov { .. } => char_swap_oov_with_rng(&text_words[pos], &vocab, 10, &mut rng),
                    _ => words[w].clone(),
                };
                tokens[pos] = w as u32;
            }
        }
    }
    let adv = Example { input: Input::Tokens(tokens.clone()), ..example.clone() };
    let text = text_words.join(" ");
    let s_src = chrf2(&detokenize(&original, words), &text) / 100.0;
    let s_base = true_label_prob(model, example)?;
    let s_adv = true_label_prob(model, &adv)?;
    let scores = ScoreTriple::new(s_src, d_tgt(s_base, s_adv)?);
    Ok(AttackOutcome { tokens, text, s_base, s_adv, scores })
}

/// One pass of adversarial training: every example is paired with a
/// one-substitution first-order perturbation, and the model descends on
/// `(1−α)·NLL(x) + α·NLL(x̂)`.
pub fn adversarial_training_epoch<T: Scalar>(
    model: &ModelState<T>,
    data: &[Example<T>],
    batch_size: usize,
    lr: T,
    alpha: T,
    constraint: Constraint,
    seed: u64,
) -> Result<ModelState<T>> {
    adv_training_loss(T::zero(), T::zero(), alpha)?;
    if batch_size == 0 {
        return Err(contract("batch_size must be >= 1"));
    }
    let mut model = model.clone();
    let order = crate::datasets::batches(data.len(), batch_size, seed, true)?;
    for idx in order {
        let embed = raw_table(&model)?;
        let mut joint: Vec<Example<T>> = Vec::with_capacity(2 * idx.len());
        let mut weights = Vec::with_capacity(2 * idx.len());
        let n = T::from_usize_lossy(idx.len());
        for &i in &idx {
            let e = &data[i];
            let ids: Vec<usize> = token_example(e)?.iter().map(|&t| t as usize).collect();
            let grads = grad_wrt_embeddings(&model, e, EmbeddingLoss::Adversarial)?;
            let mut adv = e.clone();
            if let Ok((pos, w)) = first_order_substitution(&grads, &ids, &embed, constraint, false) {
                if let Input::Tokens(t) = &mut adv.input {
                    t[pos] = w as u32;
                }
            }
            joint.push(e.clone());
            weights.push((T::one() - alpha) / n);
            joint.push(adv);
            weights.push(alpha / n);
        }
        let g = grad_params(&model, &joint, &weights)?;
        model.apply_update(&g.values, -lr);
        if !model.is_finite() {
            return Err(Error::NonFinite("adversarial training diverged".into()));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d_tgt_cases() {
        assert_eq!(d_tgt(0.5, 0.7).unwrap(), 0.0);
        assert_eq!(d_tgt(0.5, 0.25).unwrap(), 0.5);
        assert_eq!(d_tgt(0.4, 0.0).unwrap(), 1.0);
        assert_eq!(d_tgt(0.0, 0.0).unwrap(), 0.0);
        assert!(d_tgt(-0.1, 0.0).is_err());
    }

    #[test]
    fn success_cases() {
        assert_eq!(success(1.0, 0.0), 1.0);
        assert!(ScoreTriple::new(0.8, 0.3).is_success());
        assert!(!ScoreTriple::new(0.6, 0.3).is_success());
    }

    #[test]
    fn interpolated_loss() {
        assert_eq!(adv_training_loss(1.0, 3.0, 0.0).unwrap(), 1.0);
        assert_eq!(adv_training_loss(1.0, 3.0, 1.0).unwrap(), 3.0);
        assert_eq!(adv_training_loss(1.0, 3.0, 0.5).unwrap(), 2.0);
        assert!(adv_training_loss(1.0, 3.0, 1.5).is_err());
    }

    #[test]
    fn vocabulary_is_unique() {
        let v = synthetic_vocabulary(500);
        let s: HashSet<&String> = v.iter().collect();
        assert_eq!(s.len(), 500);
        assert!(v.iter().all(|w| w.len() == 6));
    }
}
