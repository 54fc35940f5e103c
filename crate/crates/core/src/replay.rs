//! Fixed-capacity ring buffer with uniform sampling (with replacement).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::Transition;
use crate::error::{PacerError, Result};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(PacerError::config("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Slot indices of `m` uniform draws with replacement.
    pub fn sample_indices(&mut self, m: usize) -> Result<Vec<usize>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        if self.storage.len() < m {
            return Err(PacerError::NotReady {
                have: self.storage.len(),
                need: m,
            });
        }
        let n = self.storage.len();
        Ok((0..m).map(|_| self.rng.random_range(0..n)).collect())
    }

    pub fn sample_batch(&mut self, m: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(m)?;
        Ok(idx.into_iter().map(|i| &self.storage[i]).collect())
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.storage.get(slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(r: f64) -> Transition {
        Transition {
            state: vec![0.0],
            action: vec![0.0],
            reward: r,
            next_state: vec![0.0],
            done: false,
        }
    }

    #[test]
    fn push_and_ring_semantics() {
        let mut b = ReplayBuffer::new(2, 0).unwrap();
        b.push(tr(1.0));
        assert_eq!(b.len(), 1);
        b.push(tr(2.0));
        b.push(tr(3.0));
        assert_eq!(b.len(), 2);
        let mut rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn batch_edge_cases() {
        let mut b = ReplayBuffer::new(10, 0).unwrap();
        assert!(b.sample_batch(0).unwrap().is_empty());
        assert!(matches!(b.sample_batch(1), Err(PacerError::NotReady { have: 0, need: 1 })));
        b.push(tr(7.0));
        assert_eq!(b.sample_batch(1).unwrap()[0].reward, 7.0);
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let fill = |seed| {
            let mut b = ReplayBuffer::new(1000, seed).unwrap();
            for i in 0..1000 {
                b.push(tr(i as f64));
            }
            b
        };
        let mut x = fill(9);
        let mut y = fill(9);
        assert_eq!(x.sample_indices(100).unwrap(), y.sample_indices(100).unwrap());
        let mut z = fill(10);
        assert_ne!(fill(9).sample_indices(100).unwrap(), z.sample_indices(100).unwrap());
    }

    /// Pearson chi-square against uniform over retained slots.
    #[test]
    fn sampling_is_uniform_over_retained_items() {
        let cap = 50;
        let mut b = ReplayBuffer::new(cap, 4).unwrap();
        for i in 0..100_000 {
            b.push(tr(i as f64));
        }
        let draws = 200_000;
        let mut counts = vec![0usize; cap];
        for i in (0..draws / cap).flat_map(|_| b.sample_indices(cap).unwrap()) {
            counts[i] += 1;
        }
        let expected = draws as f64 / cap as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 49 degrees of freedom, 0.999 quantile ~ 85.4
        assert!(chi2 < 85.4, "chi2 = {chi2}");
        assert!(b.iter().all(|t| t.reward >= (100_000 - cap) as f64));
    }

    /// After n <= capacity pushes each item is drawn with probability 1/n.
    #[test]
    fn per_item_frequency_within_three_sigma() {
        let n = 20;
        let mut b = ReplayBuffer::new(100, 8).unwrap();
        for i in 0..n {
            b.push(tr(i as f64));
        }
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for i in (0..draws / n).flat_map(|_| b.sample_indices(n).unwrap()) {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma + 1.0);
        }
    }
}
