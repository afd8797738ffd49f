use std::borrow::Borrow;

use rand::Rng;

use crate::diffcore::{Example, ModelState};
use crate::dro::erm_step;
use crate::error::{contract, Result};
use crate::scalar::Scalar;

/// Fixed-capacity uniform sample of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory<I> {
    capacity: usize,
    items: Vec<I>,
    seen_count: usize,
}

impl<I> ReplayMemory<I> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract("replay capacity must be >= 1"));
        }
        Ok(Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), seen_count: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[I] {
        &self.items
    }

    pub fn seen_count(&self) -> usize {
        self.seen_count
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `k` items drawn uniformly with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, k: usize, rng: &mut R) -> Vec<&'a I> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Reservoir sampling: the `n`-th item seen is kept with probability `capacity/n`.
pub fn reservoir_add<I, R: Rng + ?Sized>(mut memory: ReplayMemory<I>, item: I, rng: &mut R) -> ReplayMemory<I> {
    memory.seen_count += 1;
    if memory.items.len() < memory.capacity {
        memory.items.push(item);
    } else {
        let j = rng.random_range(0..memory.seen_count);
        if j < memory.capacity {
            memory.items[j] = item;
        }
    }
    memory
}

/// One step on the task batch concatenated with an equally sized replay batch.
pub fn er_step<T: Scalar, E: Borrow<Example<T>>, R: Rng + ?Sized>(
    model: &ModelState<T>,
    task_batch: &[E],
    memory: &ReplayMemory<Example<T>>,
    lr: T,
    rng: &mut R,
) -> Result<ModelState<T>> {
    let mut joint: Vec<&Example<T>> = task_batch.iter().map(Borrow::borrow).collect();
    joint.extend(memory.sample(task_batch.len(), rng));
    erm_step(model, &joint, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn large_capacity_keeps_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ReplayMemory::new(10).unwrap();
        for i in 0..7 {
            m = reservoir_add(m, i, &mut rng);
        }
        assert_eq!(m.items(), &[0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(m.seen_count(), 7);
    }

    #[test]
    fn same_seed_same_memory() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = ReplayMemory::new(3).unwrap();
            for i in 0..50 {
                m = reservoir_add(m, i, &mut rng);
            }
            m
        };
        assert_eq!(run(5), run(5));
        assert_eq!(run(5).len(), 3);
    }

    #[test]
    fn empty_memory_matches_erm() {
        let spec = crate::diffcore::ModelSpec::linear(2, 2);
        let m = ModelState::<f64>::init(spec, 1).unwrap();
        let b = [Example::dense(vec![1.0, -1.0], 1, None, 0), Example::dense(vec![0.5, 2.0], 0, None, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let er = er_step(&m, &b, &ReplayMemory::new(4).unwrap(), 0.3, &mut rng).unwrap();
        assert_eq!(er.params(), erm_step(&m, &b, 0.3).unwrap().params());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn memory_never_exceeds_capacity(capacity in 1_usize..20, stream in 0_usize..200, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m = ReplayMemory::new(capacity).unwrap();
                for i in 0..stream {
                    m = reservoir_add(m, i, &mut rng);
                    prop_assert!(m.len() <= capacity);
                }
                prop_assert_eq!(m.len(), stream.min(capacity));
                prop_assert_eq!(m.seen_count(), stream);
                let mut items = m.items().to_vec();
                items.sort_unstable();
                items.dedup();
                prop_assert_eq!(items.len(), m.len());
            }
        }
    }
}
