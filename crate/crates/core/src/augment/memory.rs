use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::env::Transition;
use crate::error::{Error, Result};

pub const DEFAULT_MEMORY_BUDGET: usize = 10_000;

/// Fixed-budget store of transitions from completed tasks.
#[derive(Debug, Clone, Default)]
pub struct EpisodicMemory {
    per_task_budget: usize,
    store: BTreeMap<usize, Vec<Transition>>,
    total: usize,
}

impl EpisodicMemory {
    pub fn new(per_task_budget: usize) -> Self {
        Self {
            per_task_budget,
            store: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn per_task_budget(&self) -> usize {
        self.per_task_budget
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn task_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.store.keys().copied()
    }

    pub fn task(&self, task_id: usize) -> Option<&[Transition]> {
        self.store.get(&task_id).map(Vec::as_slice)
    }

    /// Stores `min(budget, |buffer|)` transitions drawn uniformly without
    /// replacement from a finished task's buffer.
    pub fn append<R: Rng + ?Sized>(
        &mut self,
        task_id: usize,
        buffer: &[Transition],
        rng: &mut R,
    ) -> Result<()> {
        if self.store.contains_key(&task_id) {
            return Err(Error::State(format!(
                "task {task_id} already has episodic memory"
            )));
        }
        let n = self.per_task_budget.min(buffer.len());
        let mut picked = index::sample(rng, buffer.len(), n).into_vec();
        picked.sort_unstable();
        let chosen: Vec<Transition> = picked.into_iter().map(|i| buffer[i].clone()).collect();
        self.total += chosen.len();
        self.store.insert(task_id, chosen);
        Ok(())
    }

    /// Uniform draw with replacement across every stored transition.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        if self.total == 0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let mut k = rng.random_range(0..self.total);
                for items in self.store.values() {
                    if k < items.len() {
                        return &items[k];
                    }
                    k -= items.len();
                }
                unreachable!("index within total")
            })
            .collect()
    }
}
