//! Replay buffer of previously generated samples for discriminator updates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fixed-capacity history of generated samples.
///
/// Below capacity every query stores and returns the fresh sample. At
/// capacity, with probability 1/2 the fresh sample is returned untouched;
/// otherwise a uniformly chosen stored sample is returned and replaced by
/// the fresh one.
#[derive(Debug, Clone)]
pub struct HistoryPool<T> {
    capacity: usize,
    buffer: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T: Clone> HistoryPool<T> {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self {
            capacity,
            buffer: Vec::with_capacity(capacity),
            rng,
        }
    }

    /// Restore a pool from saved contents and generator state.
    pub fn from_parts(capacity: usize, buffer: Vec<T>, rng: ChaCha8Rng) -> Self {
        Self { capacity, buffer, rng }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn items(&self) -> &[T] {
        &self.buffer
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Returns the sample to show the discriminator.
    pub fn query(&mut self, fresh: T) -> T {
        if self.capacity == 0 {
            return fresh;
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(fresh.clone());
            return fresh;
        }
        if self.rng.random_bool(0.5) {
            let idx = self.rng.random_range(0..self.buffer.len());
            std::mem::replace(&mut self.buffer[idx], fresh)
        } else {
            fresh
        }
    }

    /// True when [`Self::query`] returned a stored sample; used for statistics.
    pub fn query_tracked(&mut self, fresh: T) -> (T, bool)
    where
        T: PartialEq,
    {
        let out = self.query(fresh.clone());
        let stale = out != fresh;
        (out, stale)
    }
}
