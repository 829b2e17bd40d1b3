//! Fixed-capacity ring buffer of transitions with uniform batch sampling.

use rand_chacha::ChaCha8Rng;

use crate::dataset::TransitionRecord;

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<TransitionRecord>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity >= 1);
        ReplayBuffer {
            capacity,
            records: Vec::new(),
            cursor: 0,
        }
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.cursor] = record;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    /// Uniform sample without replacement within the batch; the batch size
    /// is capped by the current fill.
    pub fn sample<'a>(&'a self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<&'a TransitionRecord> {
        let amount = batch.min(self.records.len());
        rand::seq::index::sample(rng, self.records.len(), amount)
            .iter()
            .map(|i| &self.records[i])
            .collect()
    }
}
