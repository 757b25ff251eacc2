use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};

/// Minibatch of transitions laid out row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 where the transition terminated, else 0.0.
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("cannot build an empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        let mut dones = Array1::zeros(n);
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::Shape("transitions differ in dimension".into()));
            }
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.state[..]));
            next_states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&t.next_state[..]));
            actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action[..]));
            rewards[i] = t.reward;
            dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(Self {
            states,
            actions,
            rewards,
            next_states,
            dones,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 100_000;

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.next = 0;
    }

    /// Stored transitions in storage order.
    pub fn transitions(&self) -> &[Transition] {
        &self.items
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.items.is_empty() {
            return Err(Error::State("cannot sample an empty replay buffer".into()));
        }
        let picked: Vec<&Transition> = (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        Batch::from_transitions(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition {
            state: vec![i as f64, 0.0],
            action: vec![0.5],
            reward: i as f64,
            next_state: vec![i as f64 + 1.0, 0.0],
            done: i % 2 == 0,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = b.transitions().iter().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn batch_layout() {
        let mut b = ReplayBuffer::new(10);
        b.push(t(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = b.sample(4, &mut rng).unwrap();
        assert_eq!(batch.states.dim(), (4, 2));
        assert_eq!(batch.actions.dim(), (4, 1));
        assert!(batch.dones.iter().all(|&d| d == 1.0));
        assert!(batch.rewards.iter().all(|&r| r == 2.0));
    }

    #[test]
    fn empty_sample_is_error() {
        let b = ReplayBuffer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(1, &mut rng).is_err());
    }
}
