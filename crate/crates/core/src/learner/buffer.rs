use rand::seq::index;
use rand::Rng;

use super::LearnerError;
use crate::env::Episode;

/// FIFO ring of complete episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: Vec<Episode>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, episodes: Vec::with_capacity(capacity.min(1024)), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Stores an episode, evicting the oldest one when full.
    pub fn push(&mut self, ep: Episode) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(ep);
        } else {
            self.episodes[self.cursor] = ep;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Indices of `k` distinct stored episodes, uniformly at random.
    pub fn sample_indices(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>, LearnerError> {
        if k > self.len() || k == 0 {
            return Err(LearnerError::InsufficientBuffer { have: self.len(), need: k.max(1) });
        }
        Ok(index::sample(rng, self.len(), k).into_vec())
    }

    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<&Episode>, LearnerError> {
        Ok(self.sample_indices(k, rng)?.into_iter().map(|i| &self.episodes[i]).collect())
    }
}
