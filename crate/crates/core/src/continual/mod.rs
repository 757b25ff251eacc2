//! Continual-learning methods layered on the SAC agent: EWC, PackNet and
//! A-GEM, plus a uniform interface the training loop drives.

mod agem;
mod ewc;
mod packnet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use agem::agem_project;
pub use ewc::{ewc_penalty, ewc_penalty_grad, mean_square, EwcAnchor, EwcState};
pub use packnet::{assign_by_magnitude, PackNetState};

use crate::autodiff::Network;
use crate::error::{Error, Result};
use crate::sac::{MemoryBatch, NetRole, ReplayBuffer, SacAgent, Streams, UpdateHook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContinualMethod {
    #[default]
    None,
    Ewc,
    Packnet,
    Agem,
}

impl ContinualMethod {
    pub const ALL: [ContinualMethod; 4] = [
        ContinualMethod::None,
        ContinualMethod::Ewc,
        ContinualMethod::Packnet,
        ContinualMethod::Agem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContinualMethod::None => "none",
            ContinualMethod::Ewc => "ewc",
            ContinualMethod::Packnet => "packnet",
            ContinualMethod::Agem => "agem",
        }
    }
}

impl fmt::Display for ContinualMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContinualMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown continual method {s:?}")))
    }
}

/// Which networks a regularizer touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Policy,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinualConfig {
    pub method: ContinualMethod,
    pub ewc_lambda: f64,
    pub fisher_samples: usize,
    pub ewc_anchor: Scope,
    /// PackNet retraining length as a fraction of the steps per task.
    pub packnet_retrain_fraction: f64,
    pub agem_scope: Scope,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            method: ContinualMethod::None,
            ewc_lambda: 1.0,
            fisher_samples: 1024,
            ewc_anchor: Scope::Both,
            packnet_retrain_fraction: 0.1,
            agem_scope: Scope::Policy,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ewc_lambda >= 0.0) {
            return Err(Error::Config("ewc_lambda must be non-negative".into()));
        }
        if self.fisher_samples == 0 {
            return Err(Error::Config("fisher_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.packnet_retrain_fraction) {
            return Err(Error::Config("packnet_retrain_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Runtime state of the configured method; doubles as the update hook.
#[derive(Debug, Clone)]
pub enum MethodState {
    None,
    Ewc(EwcState),
    PackNet(PackNetState),
    Agem { scope: Scope },
}

impl MethodState {
    pub fn new(cfg: &ContinualConfig, agent: &SacAgent, total_tasks: usize, steps_per_task: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.method {
            ContinualMethod::None => MethodState::None,
            ContinualMethod::Ewc => MethodState::Ewc(EwcState::new(
                cfg.ewc_lambda,
                cfg.fisher_samples,
                cfg.ewc_anchor == Scope::Both,
            )),
            ContinualMethod::Packnet => {
                let retrain = (steps_per_task as f64 * cfg.packnet_retrain_fraction).round() as usize;
                MethodState::PackNet(PackNetState::new(agent, total_tasks, retrain))
            }
            ContinualMethod::Agem => MethodState::Agem { scope: cfg.agem_scope },
        })
    }

    /// Task-boundary bookkeeping after `task_id` (1-based) finished training.
    pub fn end_task(&mut self, agent: &mut SacAgent, task_id: usize, buffer: &ReplayBuffer, streams: &mut Streams) -> Result<()> {
        match self {
            MethodState::Ewc(e) => e.consolidate(agent, buffer, &mut streams.memory),
            MethodState::PackNet(p) => {
                p.prune_and_freeze(agent, task_id, buffer, &mut streams.replay, &mut streams.agent)
            }
            MethodState::None | MethodState::Agem { .. } => Ok(()),
        }
    }

    /// The policy used to evaluate `task_id`.
    pub fn eval_policy(&self, agent: &SacAgent, task_id: usize) -> Network {
        match self {
            MethodState::PackNet(p) => p.policy_for_task(agent, task_id),
            _ => agent.policy().clone(),
        }
    }
}

impl UpdateHook for MethodState {
    fn adjust_gradient(
        &mut self,
        role: NetRole,
        agent: &SacAgent,
        memory: Option<&MemoryBatch>,
        grad: &mut [f64],
    ) -> Result<()> {
        match self {
            MethodState::None => Ok(()),
            MethodState::Ewc(e) => e.add_penalty_grad(role, agent.network(role).params(), grad),
            MethodState::PackNet(p) => p.adjust_gradient(role, agent, memory, grad),
            MethodState::Agem { scope } => {
                let Some(m) = memory else { return Ok(()) };
                if m.batch.is_empty() {
                    return Ok(());
                }
                let reference = match role {
                    NetRole::Policy => agent.policy_grads(&m.batch.states, None, &m.noise)?.1,
                    NetRole::Q1 | NetRole::Q2 if *scope == Scope::Both => {
                        let (_, g1, g2) = agent.critic_grads_plain(&m.batch, &m.noise_next)?;
                        if role == NetRole::Q1 {
                            g1
                        } else {
                            g2
                        }
                    }
                    _ => return Ok(()),
                };
                agem::project_in_place(grad, &reference);
                Ok(())
            }
        }
    }

    fn trainable(&self, role: NetRole) -> Option<&[bool]> {
        match self {
            MethodState::PackNet(p) => p.trainable(role),
            _ => None,
        }
    }

    fn wants_memory(&self) -> bool {
        matches!(self, MethodState::Agem { .. })
    }
}
