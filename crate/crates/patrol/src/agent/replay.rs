//! Prioritized experience replay over a sum-tree, with importance-sampling
//! weights normalized by the batch maximum.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::env::StateImage;
use crate::error::{Error, Result};
use crate::nav_map::ActionMask;

/// Floor added to |TD| so every experience stays sampleable.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Experience {
    pub s: Arc<StateImage>,
    pub a: usize,
    pub r: f64,
    pub s_next: Arc<StateImage>,
    pub done: bool,
    /// Validity mask at s_next, used to censor the target max.
    pub mask_next: ActionMask,
}

/// Binary sum-tree over leaf weights; leaves live at [capacity, 2*capacity).
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            tree: vec![0.0; 2 * capacity],
        }
    }

    pub fn set(&mut self, index: usize, weight: f64) {
        debug_assert!(index < self.capacity);
        let mut node = self.capacity + index;
        self.tree[node] = weight;
        while node > 1 {
            node /= 2;
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.tree[self.capacity + index]
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    /// Finds the leaf whose cumulative span contains `prefix`.
    pub fn find(&self, prefix: f64) -> usize {
        let mut node = 1;
        let mut rest = prefix;
        while node < self.capacity {
            let left = self.tree[2 * node];
            if rest < left {
                node = 2 * node;
            } else {
                rest -= left;
                node = 2 * node + 1;
            }
        }
        node - self.capacity
    }
}

/// FIFO ring of experiences with priority-proportional sampling:
/// P_i proportional to priority_i^alpha.
pub struct ReplayBuffer {
    capacity: usize,
    alpha: f64,
    data: Vec<Experience>,
    next: usize,
    tree: SumTree,
    /// Running max of raw priorities; new experiences enter at this value.
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        Self {
            capacity,
            alpha,
            data: Vec::with_capacity(capacity),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, exp: Experience) {
        let idx = self.next;
        if self.data.len() < self.capacity {
            self.data.push(exp);
        } else {
            self.data[idx] = exp;
        }
        self.tree.set(idx, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
    }

    /// Draws a prioritized batch. Weights are (1/(N P_i))^beta, normalized
    /// by the maximum weight within the batch.
    pub fn sample(
        &self,
        batch_size: usize,
        beta: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<(Vec<usize>, Vec<&Experience>, Vec<f64>)> {
        let n = self.data.len();
        if n < batch_size || n == 0 {
            return Err(Error::BufferTooSmall {
                have: n,
                need: batch_size.max(1),
            });
        }
        let total = self.tree.total();
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u: f64 = rng.random::<f64>() * total;
            let idx = self.tree.find(u).min(n - 1);
            let p = self.tree.get(idx) / total;
            indices.push(idx);
            weights.push((1.0 / (n as f64 * p)).powf(beta));
        }
        let max_w = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        let batch = indices.iter().map(|&i| &self.data[i]).collect();
        Ok((indices, batch, weights))
    }

    /// Sets priority_i = |TD_i| + floor for each sampled index and tracks
    /// the running max.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&idx, &td) in indices.iter().zip(td_errors) {
            let p = td.abs() + PRIORITY_FLOOR;
            self.tree.set(idx, p.powf(self.alpha));
            self.max_priority = self.max_priority.max(p);
        }
    }

    pub fn priority_of(&self, index: usize) -> f64 {
        self.tree.get(index)
    }

    pub fn sampling_distribution(&self) -> Vec<f64> {
        let total = self.tree.total();
        (0..self.len()).map(|i| self.tree.get(i) / total).collect()
    }
}
