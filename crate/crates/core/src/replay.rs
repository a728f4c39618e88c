//! Experience records and the FIFO replay ring.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Raw agent action before decoding into a `PunctureAction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RawAction {
    /// Continuous action in `[-1, 1]^2`.
    Continuous(Vec<f64>),
    /// Index into the discrete action lattice.
    Discrete(usize),
}

/// One environment step as seen by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: RawAction,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Acting-time side information carried next to a transition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActMeta {
    /// Critic head sampled by the Thompson explorer, if any.
    pub ts_head: Option<usize>,
    /// Whether the step's reward beat the acting agent's trailing median.
    pub ts_success: Option<bool>,
    /// Log-probability of the action under the acting policy (on-policy use).
    pub log_prob: Option<f64>,
}

/// A transition tagged with its source agent, as pooled centrally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledTransition {
    pub agent_id: usize,
    pub transition: Transition,
    pub meta: ActMeta,
}

/// Fixed-capacity ring buffer with strictly FIFO eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    data: Vec<T>,
    cursor: usize,
    total_pushed: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 20)),
            cursor: 0,
            total_pushed: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.data.len() < self.capacity {
            self.data.push(item);
        } else {
            self.data[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.total_pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &T {
        &self.data[idx]
    }

    /// Uniform batch of indices (with replacement).
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.data.len())).collect()
    }

    /// Contents oldest-first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &T> {
        let split = if self.data.len() < self.capacity { 0 } else { self.cursor };
        self.data[split..].iter().chain(self.data[..split].iter())
    }
}
