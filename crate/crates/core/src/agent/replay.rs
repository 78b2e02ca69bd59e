use rand::seq::index;

use super::Transition;
use crate::rng::Rng;

/// Fixed-capacity ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts, overwriting the oldest item once full. Returns the slot
    /// written.
    pub fn push(&mut self, t: Transition) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[slot] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        slot
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample of `n` distinct items (fewer if the memory is smaller).
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Transition> {
        self.sample_slots(n, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }

    /// Slots of a uniform sample, drawn exactly as [`ReplayMemory::sample`] draws.
    pub fn sample_slots(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_vec()
    }
}
