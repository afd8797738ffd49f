//! Grouped datasets: synthetic distribution-shift generators, label noise,
//! CSV persistence, batching and per-group accuracy.

mod csvio;
mod synth;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{predict, Example, ModelState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use csvio::{load_csv, save_csv};
pub use synth::{gen_distractor_text, gen_two_domain_gaussian, DistractorTextSpec, Split, TwoDomainSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset<T> {
    pub examples: Vec<Example<T>>,
    pub group_names: Vec<String>,
    pub num_groups: usize,
    pub num_classes: usize,
}

impl<T: Scalar> GroupedDataset<T> {
    /// Builds a dataset and checks the group, label and id invariants.
    pub fn new(examples: Vec<Example<T>>, group_names: Vec<String>, num_classes: usize) -> Result<Self> {
        let num_groups = group_names.len().max(1);
        let mut ids = std::collections::HashSet::with_capacity(examples.len());
        for e in &examples {
            if e.group_or_zero() >= num_groups {
                return Err(Error::Contract(format!("example {} has group {} >= {num_groups}", e.id, e.group_or_zero())));
            }
            if e.label >= num_classes {
                return Err(Error::Contract(format!("example {} has label {} >= {num_classes}", e.id, e.label)));
            }
            if !ids.insert(e.id) {
                return Err(Error::Contract(format!("duplicate example id {}", e.id)));
            }
        }
        let group_names = if group_names.is_empty() { vec!["group0".to_string()] } else { group_names };
        Ok(Self { examples, group_names, num_groups, num_classes })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Example<T>> {
        indices.iter().map(|&i| &self.examples[i]).collect()
    }

    /// Dimension of dense inputs, `None` for token data or an empty dataset.
    pub fn input_dim(&self) -> Option<usize> {
        self.examples.first().and_then(|e| e.dense_features()).map(<[T]>::len)
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_groups];
        for e in &self.examples {
            counts[e.group_or_zero()] += 1;
        }
        counts
    }
}

/// Replaces each label by a uniform draw over all classes with probability
/// `p_noise`. Ids, groups and inputs are preserved.
pub fn inject_label_noise<T: Scalar>(dataset: &GroupedDataset<T>, p_noise: f64, seed: u64) -> Result<GroupedDataset<T>> {
    if !(0.0..=1.0).contains(&p_noise) {
        return Err(Error::Contract(format!("p_noise must lie in [0, 1], got {p_noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for e in &mut out.examples {
        if rng.random::<f64>() < p_noise {
            e.label = rng.random_range(0..dataset.num_classes);
        }
    }
    Ok(out)
}

/// Partitions `0..len` into consecutive batches, optionally after a seeded
/// shuffle. The last batch may be short.
pub fn batches(len: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub per_group_accuracy: Vec<f64>,
    /// Minimum accuracy over non-empty groups.
    pub robust_accuracy: f64,
    /// Size-weighted mean accuracy.
    pub average_accuracy: f64,
    pub group_counts: Vec<usize>,
}

impl GroupMetrics {
    /// Aggregates per-example correctness flags into group metrics.
    pub fn from_predictions(correct: &[bool], groups: &[usize], num_groups: usize) -> Self {
        let mut hits = vec![0usize; num_groups];
        let mut counts = vec![0usize; num_groups];
        for (&ok, &g) in correct.iter().zip(groups) {
            counts[g] += 1;
            hits[g] += usize::from(ok);
        }
        let per_group_accuracy: Vec<f64> =
            hits.iter().zip(&counts).map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 }).collect();
        let robust_accuracy =
            per_group_accuracy.iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(&a, _)| a).fold(f64::INFINITY, f64::min);
        let total: usize = counts.iter().sum();
        let average_accuracy = if total == 0 { 0.0 } else { hits.iter().sum::<usize>() as f64 / total as f64 };
        Self {
            per_group_accuracy,
            robust_accuracy: if robust_accuracy.is_finite() { robust_accuracy } else { 0.0 },
            average_accuracy,
            group_counts: counts,
        }
    }
}

pub fn group_metrics<T: Scalar>(model: &ModelState<T>, dataset: &GroupedDataset<T>) -> Result<GroupMetrics> {
    if dataset.is_empty() {
        return Err(Error::Contract("group_metrics needs a non-empty dataset".into()));
    }
    let mut correct = Vec::with_capacity(dataset.len());
    let mut groups = Vec::with_capacity(dataset.len());
    for e in &dataset.examples {
        correct.push(predict(model, e)? == e.label);
        groups.push(e.group_or_zero());
    }
    Ok(GroupMetrics::from_predictions(&correct, &groups, dataset.num_groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ModelSpec;

    fn toy() -> GroupedDataset<f64> {
        let ex = (0..10).map(|i| Example::dense(vec![i as f64], i % 2, Some(i % 2), i as u64)).collect();
        GroupedDataset::new(ex, vec!["a".into(), "b".into()], 2).unwrap()
    }

    #[test]
    fn batch_sizes_and_order() {
        let b = batches(10, 4, 0, false).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b.concat(), (0..10).collect::<Vec<_>>());
        let s1 = batches(10, 4, 3, true).unwrap();
        let s2 = batches(10, 4, 3, true).unwrap();
        assert_eq!(s1, s2);
        let mut all = s1.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(batches(10, 0, 0, false).is_err());
    }

    #[test]
    fn metrics_arithmetic() {
        let mut correct = vec![true; 81];
        correct.extend(vec![false; 9]);
        correct.push(true);
        correct.extend(vec![false; 9]);
        let mut groups = vec![0; 90];
        groups.extend(vec![1; 10]);
        let m = GroupMetrics::from_predictions(&correct, &groups, 2);
        assert!((m.per_group_accuracy[0] - 0.9).abs() < 1e-12);
        assert!((m.robust_accuracy - 0.1).abs() < 1e-12);
        assert!((m.average_accuracy - 0.82).abs() < 1e-12);
        assert_eq!(m.group_counts, vec![90, 10]);
    }

    #[test]
    fn empty_groups_do_not_count_toward_robust() {
        let m = GroupMetrics::from_predictions(&[true, false], &[0, 0], 3);
        assert_eq!(m.robust_accuracy, 0.5);
    }

    #[test]
    fn label_noise_identity_and_preservation() {
        let d = toy();
        assert_eq!(inject_label_noise(&d, 0.0, 1).unwrap(), d);
        let noisy = inject_label_noise(&d, 1.0, 1).unwrap();
        assert_eq!(noisy.len(), d.len());
        for (a, b) in noisy.examples.iter().zip(&d.examples) {
            assert_eq!((a.id, a.group, &a.input), (b.id, b.group, &b.input));
        }
        assert!(inject_label_noise(&d, 1.5, 1).is_err());
    }

    #[test]
    fn dataset_invariants_checked() {
        let bad_group = vec![Example::<f64>::dense(vec![0.0], 0, Some(2), 0)];
        assert!(GroupedDataset::new(bad_group, vec!["a".into()], 2).is_err());
        let dup = vec![Example::<f64>::dense(vec![0.0], 0, None, 0), Example::dense(vec![1.0], 1, None, 0)];
        assert!(GroupedDataset::new(dup, vec![], 2).is_err());
    }

    #[test]
    fn perfect_classifier_metrics() {
        // w = [[-1], [1]] separates labels 0 (x = 0) and 1 (x = 1) with bias (0.5, 0)
        let ex = (0..6).map(|i| Example::dense(vec![(i % 2) as f64], i % 2, Some(i % 2), i as u64)).collect();
        let d = GroupedDataset::new(ex, vec!["a".into(), "b".into()], 2).unwrap();
        let m = ModelState::from_params(ModelSpec::linear(1, 2), vec![-1.0, 1.0, 0.5, 0.0]).unwrap();
        let gm = group_metrics(&m, &d).unwrap();
        assert_eq!(gm.robust_accuracy, 1.0);
        assert_eq!(gm.average_accuracy, 1.0);
    }
}
