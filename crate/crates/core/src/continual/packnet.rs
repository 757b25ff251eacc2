use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Network;
use crate::error::{shape_err, Error, Result};
use crate::sac::{MemoryBatch, NetRole, ReplayBuffer, SacAgent, UpdateHook};

const ROLES: [NetRole; 3] = [NetRole::Policy, NetRole::Q1, NetRole::Q2];

fn slot(role: NetRole) -> usize {
    match role {
        NetRole::Policy => 0,
        NetRole::Q1 => 1,
        NetRole::Q2 => 2,
    }
}

/// Among entries with no owner, gives `task_id` the `keep_fraction` largest by
/// magnitude (at least one) and returns the indices left free. Ties break
/// towards the lower index.
pub fn assign_by_magnitude(
    params: &[f64],
    owners: &mut [Option<usize>],
    task_id: usize,
    keep_fraction: f64,
) -> Result<Vec<usize>> {
    if params.len() != owners.len() {
        return shape_err("owner table does not match the parameter count");
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let mut free: Vec<usize> = (0..params.len()).filter(|&i| owners[i].is_none()).collect();
    if free.is_empty() {
        return Err(Error::Capacity(format!("no free parameters left for task {task_id}")));
    }
    let keep = ((free.len() as f64 * keep_fraction).round() as usize).clamp(1, free.len());
    free.sort_by(|&a, &b| params[b].abs().total_cmp(&params[a].abs()).then(a.cmp(&b)));
    for &i in &free[..keep] {
        owners[i] = Some(task_id);
    }
    let mut rest = free[keep..].to_vec();
    rest.sort_unstable();
    Ok(rest)
}

/// Prune-and-freeze parameter isolation: each finished task owns a disjoint
/// subset of every network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackNetState {
    pub total_tasks: usize,
    pub retrain_steps: usize,
    owners: Vec<Vec<Option<usize>>>,
    trainable: Vec<Vec<bool>>,
}

impl PackNetState {
    pub fn new(agent: &SacAgent, total_tasks: usize, retrain_steps: usize) -> Self {
        let owners: Vec<Vec<Option<usize>>> = ROLES
            .iter()
            .map(|&r| vec![None; agent.network(r).param_count()])
            .collect();
        let mut s = Self {
            total_tasks,
            retrain_steps,
            trainable: Vec::new(),
            owners,
        };
        s.trainable = s.free_masks();
        s
    }

    pub fn owners(&self, role: NetRole) -> &[Option<usize>] {
        &self.owners[slot(role)]
    }

    /// Mask of parameters owned by `task_id`.
    pub fn task_mask(&self, role: NetRole, task_id: usize) -> Vec<bool> {
        self.owners(role).iter().map(|o| *o == Some(task_id)).collect()
    }

    fn free_masks(&self) -> Vec<Vec<bool>> {
        self.owners.iter().map(|o| o.iter().map(Option::is_none).collect()).collect()
    }

    /// Splits off `task_id`'s share of every network, zeroes the remaining
    /// free parameters, retrains the share alone on `buffer`, then freezes it.
    pub fn prune_and_freeze<R: Rng + ?Sized>(
        &mut self,
        agent: &mut SacAgent,
        task_id: usize,
        buffer: &ReplayBuffer,
        replay_rng: &mut R,
        agent_rng: &mut R,
    ) -> Result<()> {
        if task_id == 0 || task_id > self.total_tasks {
            return Err(Error::Input(format!(
                "task {task_id} outside 1..={}",
                self.total_tasks
            )));
        }
        let remaining = self.total_tasks - task_id + 1;
        let keep = 1.0 / remaining as f64;
        for role in ROLES {
            let net = agent.network_mut(role);
            let rest = assign_by_magnitude(net.params(), &mut self.owners[slot(role)], task_id, keep)?;
            let p = net.params_mut();
            for i in rest {
                p[i] = 0.0;
            }
        }
        self.trainable = ROLES.iter().map(|&r| self.task_mask(r, task_id)).collect();
        if self.retrain_steps > 0 && !buffer.is_empty() {
            let batch_size = agent.config().batch_size;
            for _ in 0..self.retrain_steps {
                let batch = buffer.sample(batch_size, replay_rng)?;
                agent.update(&batch, None, agent_rng, self)?;
            }
        }
        self.trainable = self.free_masks();
        Ok(())
    }

    /// The policy as it acts on `task_id`: parameters owned by later tasks or
    /// still free are zeroed. Tasks not yet frozen use the full network.
    pub fn policy_for_task(&self, agent: &SacAgent, task_id: usize) -> Network {
        let owners = self.owners(NetRole::Policy);
        let mut net = agent.policy().clone();
        if !owners.contains(&Some(task_id)) {
            return net;
        }
        for (p, o) in net.params_mut().iter_mut().zip(owners) {
            if !matches!(o, Some(k) if *k <= task_id) {
                *p = 0.0;
            }
        }
        net
    }
}

impl UpdateHook for PackNetState {
    fn adjust_gradient(
        &mut self,
        role: NetRole,
        _agent: &SacAgent,
        _memory: Option<&MemoryBatch>,
        grad: &mut [f64],
    ) -> Result<()> {
        let mask = &self.trainable[slot(role)];
        if mask.len() != grad.len() {
            return shape_err("PackNet mask does not match the gradient");
        }
        for (g, &m) in grad.iter_mut().zip(mask) {
            if !m {
                *g = 0.0;
            }
        }
        Ok(())
    }

    fn trainable(&self, role: NetRole) -> Option<&[bool]> {
        Some(&self.trainable[slot(role)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitude_ranking() {
        let mut owners = vec![None; 4];
        let rest = assign_by_magnitude(&[0.9, 0.1, -0.5, 0.05], &mut owners, 1, 0.5).unwrap();
        assert_eq!(owners, vec![Some(1), None, Some(1), None]);
        assert_eq!(rest, vec![1, 3]);
    }

    #[test]
    fn full_keep_assigns_everything() {
        let mut owners = vec![None; 3];
        let rest = assign_by_magnitude(&[0.0, 1.0, -2.0], &mut owners, 1, 1.0).unwrap();
        assert!(rest.is_empty());
        assert!(owners.iter().all(|o| *o == Some(1)));
        assert!(matches!(
            assign_by_magnitude(&[0.0, 1.0, -2.0], &mut owners, 2, 1.0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn later_tasks_take_only_free_entries() {
        let mut owners = vec![Some(1), None, None, None];
        assign_by_magnitude(&[5.0, 0.1, 0.3, 0.2], &mut owners, 2, 0.5).unwrap();
        assert_eq!(owners, vec![Some(1), None, Some(2), Some(2)]);
    }
}
