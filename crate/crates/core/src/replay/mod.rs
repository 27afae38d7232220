//! Prioritized experience replay with importance-sampling weights and a
//! uniform-sampling mode.
//!
//! Sampling probabilities follow `P_i = (e_i^p + δ) / Σ_k (e_k^p + δ)` with
//! exponent `p = 0.6` and offset `δ = 0.05`, so zero-error entries keep
//! non-zero support.

use rand::Rng;
use thiserror::Error;

use crate::env::Transition;

pub const PRIORITY_EXPONENT: f64 = 0.6;
pub const PRIORITY_OFFSET: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("need {want} transitions but buffer holds {have}")]
    InsufficientData { want: usize, have: usize },
    #[error("index {0} out of range (size {1})")]
    IndexOutOfRange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Prioritized,
    Uniform,
}

struct Entry {
    transition: Transition,
    priority: f64,
}

/// FIFO ring buffer with proportional prioritization.
pub struct ReplayBuffer {
    entries: Vec<Entry>,
    head: usize,
    capacity: usize,
    /// Importance-sampling exponent in [0, 1].
    pub is_beta: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer {
            entries: Vec::with_capacity(capacity.min(1 << 20)),
            head: 0,
            capacity,
            is_beta: 0.4,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn priority(&self, logical_index: usize) -> Option<f64> {
        self.physical(logical_index).map(|i| self.entries[i].priority)
    }

    /// Logical index 0 = oldest entry.
    fn physical(&self, logical: usize) -> Option<usize> {
        if logical >= self.entries.len() {
            return None;
        }
        if self.entries.len() < self.capacity {
            Some(logical)
        } else {
            Some((self.head + logical) % self.capacity)
        }
    }

    fn logical(&self, physical: usize) -> usize {
        if self.entries.len() < self.capacity {
            physical
        } else {
            (physical + self.capacity - self.head) % self.capacity
        }
    }

    /// Insert with the current maximum priority (1.0 when empty), evicting
    /// the oldest entry beyond capacity.
    pub fn push(&mut self, transition: Transition) {
        let priority = self
            .entries
            .iter()
            .map(|e| e.priority)
            .fold(f64::NEG_INFINITY, f64::max);
        let priority = if priority.is_finite() { priority } else { 1.0 };
        if self.entries.len() < self.capacity {
            self.entries.push(Entry {
                transition,
                priority,
            });
        } else {
            self.entries[self.head] = Entry {
                transition,
                priority,
            };
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Analytic sampling probabilities in logical order.
    pub fn probabilities(&self, mode: SampleMode) -> Vec<f64> {
        let n = self.entries.len();
        match mode {
            SampleMode::Uniform => vec![1.0 / n as f64; n],
            SampleMode::Prioritized => {
                let mut mass: Vec<f64> = (0..n)
                    .map(|i| {
                        let p = self.entries[self.physical(i).unwrap()].priority;
                        p.powf(PRIORITY_EXPONENT) + PRIORITY_OFFSET
                    })
                    .collect();
                let total: f64 = mass.iter().sum();
                for m in mass.iter_mut() {
                    *m /= total;
                }
                mass
            }
        }
    }

    /// Draw `n` transitions (with replacement). Returns references, the
    /// importance-sampling weights (max-normalized; all ones in uniform
    /// mode) and the logical indices drawn.
    pub fn sample<R: Rng>(
        &self,
        n: usize,
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<(Vec<&Transition>, Vec<f64>, Vec<usize>), ReplayError> {
        if self.entries.len() < n || n == 0 {
            return Err(ReplayError::InsufficientData {
                want: n,
                have: self.entries.len(),
            });
        }
        let probs = self.probabilities(mode);
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        let size = self.entries.len();
        let mut picks = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen_range(0.0..1.0);
            let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                Ok(i) => (i + 1).min(size - 1),
                Err(i) => i.min(size - 1),
            };
            picks.push(idx);
        }
        let weights = match mode {
            SampleMode::Uniform => vec![1.0; n],
            SampleMode::Prioritized => {
                let nn = size as f64;
                let raw: Vec<f64> = picks
                    .iter()
                    .map(|&i| (nn * probs[i]).powf(-self.is_beta))
                    .collect();
                let wmax = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                raw.into_iter().map(|w| w / wmax).collect()
            }
        };
        let transitions = picks
            .iter()
            .map(|&i| &self.entries[self.physical(i).unwrap()].transition)
            .collect();
        Ok((transitions, weights, picks))
    }

    /// Set priorities to the absolute errors at the given logical indices.
    pub fn update_priorities(
        &mut self,
        indices: &[usize],
        errors: &[f64],
    ) -> Result<(), ReplayError> {
        for (&i, &e) in indices.iter().zip(errors.iter()) {
            let phys = self
                .physical(i)
                .ok_or(ReplayError::IndexOutOfRange(i, self.entries.len()))?;
            self.entries[phys].priority = e.abs();
        }
        Ok(())
    }

    /// Oldest-first iteration of stored priorities.
    pub fn priorities(&self) -> Vec<f64> {
        (0..self.entries.len())
            .map(|i| self.entries[self.physical(i).unwrap()].priority)
            .collect()
    }

    #[allow(dead_code)]
    fn debug_logical_roundtrip(&self) -> bool {
        (0..self.entries.len()).all(|i| self.logical(self.physical(i).unwrap()) == i)
    }
}
