use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GroupedDataset;
use crate::diffcore::Example;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two Gaussian domains in the plane with incompatible decision boundaries.
///
/// Majority domain: class 0 at `(−1, 0)`, class 1 at `(+1, 0)` (vertical
/// boundary). Minority domain, centred at `(offset, offset)`: class 0 at
/// `(offset, offset + 1)`, class 1 at `(offset, offset − 1)` (horizontal
/// boundary). Group id is the domain index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoDomainSpec {
    pub total_points: usize,
    /// Fraction of points drawn from the minority domain, in `(0, 1]`.
    pub minority_ratio: f64,
    pub sigma: f64,
    pub minority_offset: f64,
    pub seed: u64,
}

impl Default for TwoDomainSpec {
    fn default() -> Self {
        Self { total_points: 10_000, minority_ratio: 1.0 / 51.0, sigma: 1.0, minority_offset: 3.0, seed: 0 }
    }
}

impl TwoDomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_points == 0 {
            return Err(Error::Contract("total_points must be positive".into()));
        }
        if !(self.minority_ratio > 0.0 && self.minority_ratio <= 1.0) {
            return Err(Error::Contract(format!("minority_ratio must lie in (0, 1], got {}", self.minority_ratio)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Contract("sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn minority_count(&self) -> usize {
        ((self.total_points as f64) * self.minority_ratio).round() as usize
    }

    /// Class means `[domain][class]`.
    pub fn class_means(&self) -> [[[f64; 2]; 2]; 2] {
        let c = self.minority_offset;
        [[[-1.0, 0.0], [1.0, 0.0]], [[c, c + 1.0], [c, c - 1.0]]]
    }
}

pub fn gen_two_domain_gaussian<T: Scalar>(spec: &TwoDomainSpec) -> Result<GroupedDataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let minority = spec.minority_count().min(spec.total_points);
    let majority = spec.total_points - minority;
    let means = spec.class_means();
    let mut examples = Vec::with_capacity(spec.total_points);
    let mut id = 0u64;
    for (domain, count) in [(0usize, majority), (1, minority)] {
        for i in 0..count {
            let label = i % 2;
            let mu = means[domain][label];
            let x: Vec<T> = mu
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(m + spec.sigma * z)
                })
                .collect();
            examples.push(Example::dense(x, label, Some(domain), id));
            id += 1;
        }
    }
    GroupedDataset::new(examples, vec!["majority".into(), "minority".into()], 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Distractor correlated with the label according to `bias`.
    Train,
    /// Distractor present on exactly half of each class.
    Test,
}

/// Binary text classification with a spurious distractor token.
///
/// Token 0 is the distractor. The remaining vocabulary is split into a pool
/// for each label and a shared noise pool; each of the `seq_len` tokens comes
/// from a label pool with probability `signal`, otherwise from the noise pool.
/// A label-pool token matches the example's label with probability `purity`.
/// Groups are `label × distractor presence`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorTextSpec {
    pub n: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub bias: f64,
    pub signal: f64,
    pub purity: f64,
    pub split: Split,
    pub seed: u64,
}

impl Default for DistractorTextSpec {
    fn default() -> Self {
        Self { n: 4000, vocab_size: 64, seq_len: 8, bias: 0.95, signal: 0.25, purity: 1.0, split: Split::Train, seed: 0 }
    }
}

pub const DISTRACTOR_TOKEN: u32 = 0;

impl DistractorTextSpec {
    /// Token pools `(label 0, label 1, noise)` as half-open id ranges.
    pub fn pools(&self) -> Result<[std::ops::Range<u32>; 3]> {
        if self.vocab_size < 8 {
            return Err(Error::Contract(format!("vocab_size must be >= 8 to form token pools, got {}", self.vocab_size)));
        }
        let usable = (self.vocab_size - 1) as u32;
        let m = usable / 3;
        Ok([1..1 + m, 1 + m..1 + 2 * m, 1 + 2 * m..self.vocab_size as u32])
    }

    pub fn group_index(label: usize, has_distractor: bool) -> usize {
        label * 2 + usize::from(has_distractor)
    }
}

pub fn gen_distractor_text<T: Scalar>(spec: &DistractorTextSpec) -> Result<GroupedDataset<T>> {
    let pools = spec.pools()?;
    if spec.n == 0 || spec.seq_len == 0 {
        return Err(Error::Contract("n and seq_len must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.bias) || !(0.0..=1.0).contains(&spec.signal) || !(0.0..=1.0).contains(&spec.purity) {
        return Err(Error::Contract("bias, signal and purity must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut examples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % 2;
        let has_distractor = match spec.split {
            Split::Train => {
                let p = if label == 0 { spec.bias } else { 1.0 - spec.bias };
                rng.random::<f64>() < p
            }
            Split::Test => (i / 2) % 2 == 0,
        };
        let mut tokens = Vec::with_capacity(spec.seq_len + 1);
        if has_distractor {
            tokens.push(DISTRACTOR_TOKEN);
        }
        for _ in 0..spec.seq_len {
            let pool = if rng.random::<f64>() < spec.signal {
                let own = rng.random::<f64>() < spec.purity;
                &pools[if own { label } else { 1 - label }]
            } else {
                &pools[2]
            };
            tokens.push(rng.random_range(pool.clone()));
        }
        let group = DistractorTextSpec::group_index(label, has_distractor);
        examples.push(Example::tokens(tokens, label, Some(group), i as u64));
    }
    let names = ["label0_plain", "label0_distractor", "label1_plain", "label1_distractor"];
    GroupedDataset::new(examples, names.iter().map(|s| s.to_string()).collect(), 2)
}
