use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// One hidden layer with tanh activation.
    Mlp {
        hidden_units: usize,
    },
    /// Mean-pooled token embeddings followed by a linear head.
    EmbedBag {
        vocab_size: usize,
        embed_dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Ignored for [`Architecture::EmbedBag`].
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self { architecture: Architecture::Linear, input_dim, num_classes }
    }

    pub fn mlp(input_dim: usize, hidden_units: usize, num_classes: usize) -> Self {
        Self { architecture: Architecture::Mlp { hidden_units }, input_dim, num_classes }
    }

    pub fn embed_bag(vocab_size: usize, embed_dim: usize, num_classes: usize) -> Self {
        Self { architecture: Architecture::EmbedBag { vocab_size, embed_dim }, input_dim: 0, num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Contract(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        match self.architecture {
            Architecture::Linear if self.input_dim == 0 => Err(Error::Contract("input_dim must be positive".into())),
            Architecture::Mlp { hidden_units } if hidden_units == 0 || self.input_dim == 0 => {
                Err(Error::Contract("mlp needs hidden_units >= 1 and input_dim >= 1".into()))
            }
            Architecture::EmbedBag { vocab_size, embed_dim } if vocab_size < 2 || embed_dim == 0 => {
                Err(Error::Contract("embed_bag needs vocab_size >= 2 and embed_dim >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Width of the representation the classification head reads.
    pub fn feature_dim(&self) -> usize {
        match self.architecture {
            Architecture::Linear => self.input_dim,
            Architecture::Mlp { hidden_units } => hidden_units,
            Architecture::EmbedBag { embed_dim, .. } => embed_dim,
        }
    }

    pub fn layout(&self) -> Layout {
        let c = self.num_classes;
        let mut b = LayoutBuilder::default();
        match self.architecture {
            Architecture::Linear => {
                b.push("weight", c, self.input_dim, self.input_dim);
                b.push("bias", c, 1, 0);
            }
            Architecture::Mlp { hidden_units: h } => {
                b.push("hidden.weight", h, self.input_dim, self.input_dim);
                b.push("hidden.bias", h, 1, 0);
                b.push("head.weight", c, h, h);
                b.push("head.bias", c, 1, 0);
            }
            Architecture::EmbedBag { vocab_size, embed_dim } => {
                b.push("embedding", vocab_size, embed_dim, embed_dim);
                b.push("head.weight", c, embed_dim, embed_dim);
                b.push("head.bias", c, 1, 0);
            }
        }
        b.finish()
    }
}

/// One contiguous block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: &'static str,
    pub range: Range<usize>,
    pub rows: usize,
    pub cols: usize,
    /// Fan-in used for initialization; zero marks a bias.
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slots: Vec<Slot>,
    len: usize,
}

impl Layout {
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub(crate) fn range(&self, name: &str) -> Range<usize> {
        self.slot(name).map(|s| s.range.clone()).expect("slot present in layout")
    }

    /// Parameters that belong to the classification head.
    pub fn head_range(&self) -> Range<usize> {
        let start = self
            .slots
            .iter()
            .find(|s| s.name.starts_with("head") || s.name == "weight")
            .map(|s| s.range.start)
            .unwrap_or(self.len);
        start..self.len
    }
}

#[derive(Default)]
struct LayoutBuilder {
    slots: Vec<Slot>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: &'static str, rows: usize, cols: usize, fan_in: usize) {
        let n = rows * cols;
        self.slots.push(Slot { name, range: self.offset..self.offset + n, rows, cols, fan_in });
        self.offset += n;
    }

    fn finish(self) -> Layout {
        Layout { slots: self.slots, len: self.offset }
    }
}

/// A classifier: its spec plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    spec: ModelSpec,
    params: Vec<T>,
    layout: Layout,
}

impl<T: Scalar> ModelState<T> {
    /// Deterministic initialization: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.len()];
        for slot in layout.slots() {
            if slot.fan_in == 0 {
                continue;
            }
            let bound = 1.0 / (slot.fan_in as f64).sqrt();
            for p in &mut params[slot.range.clone()] {
                *p = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(Self { spec, params, layout })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Self { spec, params: vec![T::zero(); layout.len()], layout })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if params.len() != layout.len() {
            return Err(Error::InputShape {
                expected: format!("{} parameters", layout.len()),
                got: format!("{} parameters", params.len()),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { spec, params, layout })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// `θ ← θ + scale · direction`.
    pub fn apply_update(&mut self, direction: &[T], scale: T) {
        debug_assert_eq!(direction.len(), self.params.len());
        for (p, &d) in self.params.iter_mut().zip(direction) {
            *p = *p + scale * d;
        }
    }

    pub fn slot_params(&self, name: &str) -> &[T] {
        &self.params[self.layout.range(name)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Input<T> {
    Dense(Vec<T>),
    Tokens(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example<T> {
    pub input: Input<T>,
    pub label: usize,
    pub group: Option<usize>,
    pub id: u64,
}

impl<T: Scalar> Example<T> {
    pub fn dense(features: Vec<T>, label: usize, group: Option<usize>, id: u64) -> Self {
        Self { input: Input::Dense(features), label, group, id }
    }

    pub fn tokens(tokens: Vec<u32>, label: usize, group: Option<usize>, id: u64) -> Self {
        Self { input: Input::Tokens(tokens), label, group, id }
    }

    pub fn group_or_zero(&self) -> usize {
        self.group.unwrap_or(0)
    }

    pub fn dense_features(&self) -> Option<&[T]> {
        match &self.input {
            Input::Dense(x) => Some(x),
            Input::Tokens(_) => None,
        }
    }
}

/// Gradient of a scalar objective with respect to the flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> BatchGradient<T> {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![T::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> T {
        crate::scalar::norm2(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
