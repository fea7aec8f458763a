//! Fixed-capacity FIFO experience replay.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::env::Observation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("cannot sample a batch of {batch} from a buffer holding {size}")]
    BatchTooLarge { batch: usize, size: usize },
    #[error("replay capacity must be at least 1")]
    ZeroCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Experience>,
    // next slot to overwrite once full; also the index of the oldest entry
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
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

    pub fn push(&mut self, e: Experience) {
        if self.storage.len() < self.capacity {
            self.storage.push(e);
        } else {
            self.storage[self.cursor] = e;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let (newer, older) = self.storage.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }

    /// Uniform draw of `batch` distinct experiences.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<&Experience>, ReplayError> {
        if batch > self.storage.len() {
            return Err(ReplayError::BatchTooLarge {
                batch,
                size: self.storage.len(),
            });
        }
        Ok(index::sample(rng, self.storage.len(), batch)
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }
}
