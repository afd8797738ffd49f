use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSwapConfig {
    pub max_scrambling: usize,
    pub seed: u64,
}

impl Default for CharSwapConfig {
    fn default() -> Self {
        Self { max_scrambling: 10, seed: 0 }
    }
}

/// Makes `word` out-of-vocabulary. Words longer than 3 characters get up to
/// `max_scrambling` swaps of two adjacent inner characters at a random
/// position in `[1, L−3]`; anything still in the vocabulary then has its
/// last character repeated until it is not.
pub fn char_swap_oov_with_rng<R: Rng + ?Sized>(
    word: &str,
    vocab: &HashSet<String>,
    max_scrambling: usize,
    rng: &mut R,
) -> String {
    let mut w: Vec<char> = word.chars().collect();
    let len = w.len();
    if len > 3 {
        for _ in 0..max_scrambling {
            let pos = rng.random_range(1..=len - 3);
            w.swap(pos, pos + 1);
            if !vocab.contains(&w.iter().collect::<String>()) {
                break;
            }
        }
    }
    let mut out: String = w.iter().collect();
    if let Some(&last) = w.last() {
        while vocab.contains(&out) {
            out.push(last);
        }
    }
    out
}

pub fn char_swap_oov(word: &str, vocab: &HashSet<String>, config: &CharSwapConfig) -> Result<String> {
    if config.max_scrambling == 0 {
        return Err(contract("max_scrambling must be >= 1"));
    }
    if word.is_empty() {
        return Err(contract("cannot perturb an empty word"));
    }
    Ok(char_swap_oov_with_rng(word, vocab, config.max_scrambling, &mut ChaCha8Rng::seed_from_u64(config.seed)))
}

/// Word vectors, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub vectors: Vec<Vec<T>>,
    pub vocabulary: Vec<String>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(vectors: Vec<Vec<T>>, vocabulary: Vec<String>) -> Result<Self> {
        if vectors.len() != vocabulary.len() {
            return Err(contract("one vector per vocabulary entry required"));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(contract("embedding rows must share a dimension"));
            }
        }
        Ok(Self { vectors, vocabulary })
    }

    /// Rows taken from a flat row-major matrix.
    pub fn from_flat(flat: &[T], dim: usize, vocabulary: Vec<String>) -> Result<Self> {
        if dim == 0 || flat.len() != dim * vocabulary.len() {
            return Err(contract("flat embedding size does not match vocabulary"));
        }
        Self::new(flat.chunks(dim).map(<[T]>::to_vec).collect(), vocabulary)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other tokens by Euclidean distance; ties go to the lower id.
pub fn knn_candidates<T: Scalar>(token_id: usize, table: &EmbeddingTable<T>, k: usize) -> Result<Vec<usize>> {
    if token_id >= table.len() {
        return Err(contract(format!("token {token_id} outside a vocabulary of {}", table.len())));
    }
    if k >= table.len() {
        return Err(contract("k must be smaller than the vocabulary"));
    }
    let me = &table.vectors[token_id];
    let mut scored: Vec<(T, usize)> =
        (0..table.len()).filter(|&j| j != token_id).map(|j| (sq_dist(me, &table.vectors[j]), j)).collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, j)| j).collect())
}

/// Which replacements the substitution search may consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    None,
    Knn {
        k: usize,
    },
    /// Only the character-swapped, out-of-vocabulary form, which the model
    /// sees as `unk_id`.
    CharSwapOov {
        unk_id: usize,
    },
}

/// Exhaustive first-order search for the single token substitution that
/// most increases the loss: maximizes `(E[w] − E[wᵢ])·gᵢ` over positions
/// `i` and admissible `w ≠ wᵢ`. Ties go to the lowest `(position, id)`.
pub fn first_order_substitution<T: Scalar>(
    position_grads: &[Vec<T>],
    current_ids: &[usize],
    table: &EmbeddingTable<T>,
    constraint: Constraint,
    sign_normalize: bool,
) -> Result<(usize, usize)> {
    if position_grads.len() != current_ids.len() {
        return Err(contract("one gradient per position required"));
    }
    let dim = table.dim();
    if position_grads.iter().any(|g| g.len() != dim) {
        return Err(Error::InputShape { expected: format!("gradients of width {dim}"), got: "other widths".into() });
    }
    if current_ids.iter().any(|&c| c >= table.len()) {
        return Err(contract("current token outside the vocabulary"));
    }
    let mut best: Option<(T, usize, usize)> = None;
    for (pos, (g, &cur)) in position_grads.iter().zip(current_ids).enumerate() {
        let g: Vec<T> = if sign_normalize { g.iter().map(|&x| sign(x)).collect() } else { g.clone() };
        let base = crate::scalar::dot(&table.vectors[cur], &g);
        let candidates: Vec<usize> = match constraint {
            Constraint::None => (0..table.len()).collect(),
            Constraint::Knn { k } => {
                let mut c = knn_candidates(cur, table, k)?;
                c.sort_unstable();
                c
            }
            Constraint::CharSwapOov { unk_id } => {
                if unk_id >= table.len() {
                    return Err(contract("unk id outside the vocabulary"));
                }
                vec![unk_id]
            }
        };
        for w in candidates.into_iter().filter(|&w| w != cur) {
            let score = crate::scalar::dot(&table.vectors[w], &g) - base;
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, pos, w));
            }
        }
    }
    best.map(|(_, p, w)| (p, w)).ok_or(Error::NoCandidate)
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
