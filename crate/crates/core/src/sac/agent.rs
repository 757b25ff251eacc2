use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::Batch;
use crate::augment::{memory_gradient, AugmentationKind, Augmenter, LossProbe};
use crate::autodiff::{row, Activation, HeadOutput, Network, Optimizer, OptimizerKind, OutputHead, ParamId, Tape, Var};
use crate::error::{shape_err, Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Keeps `ln(1 - tanh(u)^2)` finite when the action saturates.
const TANH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Small enough that the entropy bonus does not outweigh reaching a
    /// terminal success state early in training.
    pub init_alpha: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub optimizer: OptimizerKind,
    /// Defaults to `-action_dim` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            gamma: 0.99,
            tau: 0.005,
            policy_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            init_alpha: 0.1,
            batch_size: 128,
            buffer_capacity: super::replay::DEFAULT_BUFFER_CAPACITY,
            warmup_steps: 1000,
            optimizer: OptimizerKind::Adam,
            target_entropy: None,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.policy_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr >= 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.init_alpha > 0.0) {
            return bad("init_alpha must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive");
        }
        Ok(())
    }
}

/// Which network a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetRole {
    Policy,
    Q1,
    Q2,
}

/// Transitions drawn from episodic memory together with the policy noise
/// used to evaluate them.
#[derive(Debug, Clone)]
pub struct MemoryBatch {
    pub batch: Batch,
    pub noise: Array2<f64>,
    pub noise_next: Array2<f64>,
}

/// Lets continual-learning methods reshape gradients and freeze parameters.
pub trait UpdateHook {
    /// Called with the raw gradient of `role` before the optimizer step.
    fn adjust_gradient(
        &mut self,
        _role: NetRole,
        _agent: &SacAgent,
        _memory: Option<&MemoryBatch>,
        _grad: &mut [f64],
    ) -> Result<()> {
        Ok(())
    }

    /// Per-parameter trainable mask; `None` trains everything.
    fn trainable(&self, _role: NetRole) -> Option<&[bool]> {
        None
    }

    /// Whether updates should be handed a memory batch.
    fn wants_memory(&self) -> bool {
        false
    }
}

/// Hook that leaves every update untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl UpdateHook for NoHook {}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentHeader {
    config: SacConfig,
    state_dim: usize,
    action_dim: usize,
    log_alpha: f64,
    target_entropy: f64,
    updates: u64,
}

/// Soft Actor-Critic with twin critics, Polyak-averaged targets and learned
/// temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    cfg: SacConfig,
    state_dim: usize,
    action_dim: usize,
    policy: Network,
    q1: Network,
    q2: Network,
    q1_target: Network,
    q2_target: Network,
    log_alpha: f64,
    target_entropy: f64,
    policy_opt: Optimizer,
    q1_opt: Optimizer,
    q2_opt: Optimizer,
    alpha_opt: Optimizer,
    updates: u64,
}

fn layers(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} became {v}")))
    }
}

/// Reparameterized tanh-Gaussian sample and its per-row log-probability.
fn sample_on_tape(
    tape: &mut Tape<'_>,
    policy: &Network,
    id: ParamId,
    states: Var,
    noise: &Array2<f64>,
) -> Result<(Var, Var)> {
    let HeadOutput::Gaussian { mean, log_std } = policy.build(tape, id, states)? else {
        return shape_err("policy network must have a Gaussian head");
    };
    if tape.value(mean).dim() != noise.dim() {
        return shape_err(format!(
            "policy noise has shape {:?}, expected {:?}",
            noise.dim(),
            tape.value(mean).dim()
        ));
    }
    let std = tape.exp(log_std);
    let n = tape.constant(noise.clone());
    let spread = tape.mul(std, n)?;
    let u = tape.add(mean, spread)?;
    let a = tape.tanh(u);
    let a2 = tape.square(a);
    let neg = tape.scale(a2, -1.0);
    let squash = tape.shift(neg, 1.0 + TANH_EPS);
    let log_squash = tape.log(squash);
    let per_dim = tape.add(log_std, log_squash)?;
    let summed = tape.sum_rows(per_dim);
    let base = noise.map_axis(ndarray::Axis(1), |r| {
        r.iter().map(|z| -0.5 * z * z - HALF_LN_2PI).sum::<f64>()
    });
    let base = tape.constant(base.insert_axis(ndarray::Axis(1)));
    let log_prob = tape.sub(base, summed)?;
    Ok((a, log_prob))
}

fn q_on_tape(tape: &mut Tape<'_>, q: &Network, id: ParamId, states: Var, actions: Var) -> Result<Var> {
    let x = tape.concat(states, actions)?;
    q.build(tape, id, x)?.linear()
}

fn averaged(tape: &mut Tape<'_>, a: Var, b: Option<Var>) -> Result<Var> {
    match b {
        None => Ok(a),
        Some(b) => {
            let sum = tape.add(a, b)?;
            Ok(tape.scale(sum, 0.5))
        }
    }
}

fn column(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(1))
}

fn polyak(target: &mut Network, online: &Network, tau: f64) {
    for (t, &o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let policy = Network::new(
            &layers(state_dim, &cfg.hidden, 2 * action_dim),
            cfg.activation,
            OutputHead::GaussianPolicy,
            rng,
        )?;
        let q_layers = layers(state_dim + action_dim, &cfg.hidden, 1);
        let q1 = Network::new(&q_layers, cfg.activation, OutputHead::Linear, rng)?;
        let q2 = Network::new(&q_layers, cfg.activation, OutputHead::Linear, rng)?;
        let target_entropy = cfg.target_entropy.unwrap_or(-(action_dim as f64));
        Ok(Self {
            policy_opt: Optimizer::new(cfg.optimizer, cfg.policy_lr, policy.param_count()),
            q1_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, q1.param_count()),
            q2_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, q2.param_count()),
            alpha_opt: Optimizer::new(cfg.optimizer, cfg.alpha_lr, 1),
            log_alpha: cfg.init_alpha.ln(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            target_entropy,
            state_dim,
            action_dim,
            cfg,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn network(&self, role: NetRole) -> &Network {
        match role {
            NetRole::Policy => &self.policy,
            NetRole::Q1 => &self.q1,
            NetRole::Q2 => &self.q2,
        }
    }

    pub fn network_mut(&mut self, role: NetRole) -> &mut Network {
        match role {
            NetRole::Policy => &mut self.policy,
            NetRole::Q1 => &mut self.q1,
            NetRole::Q2 => &mut self.q2,
        }
    }

    pub fn policy(&self) -> &Network {
        &self.policy
    }

    /// Resets optimizer moments, e.g. when a new task starts.
    pub fn reset_optimizers(&mut self) {
        let c = &self.cfg;
        self.policy_opt = Optimizer::new(c.optimizer, c.policy_lr, self.policy.param_count());
        self.q1_opt = Optimizer::new(c.optimizer, c.critic_lr, self.q1.param_count());
        self.q2_opt = Optimizer::new(c.optimizer, c.critic_lr, self.q2.param_count());
    }

    /// Action for one observation: `tanh(mean)` when deterministic, else a
    /// reparameterized sample.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], stochastic: bool, rng: &mut R) -> Result<Vec<f64>> {
        act_with(&self.policy, obs, stochastic, rng)
    }

    /// `min(Q1', Q2')(s, a') - alpha * log pi(a'|s)` with `a' ~ pi(.|s)`.
    pub fn soft_value(&self, states: &Array2<f64>, noise: &Array2<f64>) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let pid = tape.register(self.policy.params(), false);
        let t1 = tape.register(self.q1_target.params(), false);
        let t2 = tape.register(self.q2_target.params(), false);
        let s = tape.constant(states.clone());
        let (a, logp) = sample_on_tape(&mut tape, &self.policy, pid, s, noise)?;
        let v1 = q_on_tape(&mut tape, &self.q1_target, t1, s, a)?;
        let v2 = q_on_tape(&mut tape, &self.q2_target, t2, s, a)?;
        let q = tape.min(v1, v2)?;
        let alpha = self.alpha();
        let v = tape.value(q) - &(tape.value(logp) * alpha);
        Ok(v.column(0).to_owned())
    }

    /// Bellman targets. With `aug_next`, the bootstrap value is averaged over
    /// the original and augmented next states (same policy noise).
    pub fn targets(&self, batch: &Batch, aug_next: Option<&Array2<f64>>, noise_next: &Array2<f64>) -> Result<Array1<f64>> {
        let mut v = self.soft_value(&batch.next_states, noise_next)?;
        if let Some(ns) = aug_next {
            let va = self.soft_value(ns, noise_next)?;
            v = (&v + &va) * 0.5;
        }
        let gamma = self.cfg.gamma;
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * v[i]
        }))
    }

    /// Summed twin-critic loss and its gradients.
    pub fn critic_grads(
        &self,
        batch: &Batch,
        aug_states: Option<&Array2<f64>>,
        targets: &Array1<f64>,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let i1 = tape.register(self.q1.params(), true);
        let i2 = tape.register(self.q2.params(), true);
        let s = tape.constant(batch.states.clone());
        let a = tape.constant(batch.actions.clone());
        let sa = aug_states.map(|x| tape.constant(x.clone()));
        let y = tape.constant(column(targets));
        let mut total = None;
        for (net, id) in [(&self.q1, i1), (&self.q2, i2)] {
            let q = q_on_tape(&mut tape, net, id, s, a)?;
            let qa = match sa {
                Some(x) => Some(q_on_tape(&mut tape, net, id, x, a)?),
                None => None,
            };
            let q = averaged(&mut tape, q, qa)?;
            let diff = tape.sub(q, y)?;
            let sq = tape.square(diff);
            let l = tape.mean(sq);
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let loss = total.expect("two critics");
        let value = finite("critic loss", tape.scalar(loss))?;
        let mut g = tape.backward(loss)?;
        let g1 = g.take_param(i1).unwrap_or_else(|| vec![0.0; self.q1.param_count()]);
        let g2 = g.take_param(i2).unwrap_or_else(|| vec![0.0; self.q2.param_count()]);
        Ok((value, g1, g2))
    }

    /// Critic gradients on a batch without augmentation; used as the A-GEM
    /// reference on memory.
    pub fn critic_grads_plain(&self, batch: &Batch, noise_next: &Array2<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let y = self.targets(batch, None, noise_next)?;
        self.critic_grads(batch, None, &y)
    }

    /// Policy loss `mean(alpha log pi - min Q)`, its gradient, and the mean
    /// log-probability. With `aug_states` the loss is averaged over both
    /// branches.
    pub fn policy_grads(
        &self,
        states: &Array2<f64>,
        aug_states: Option<&Array2<f64>>,
        noise: &Array2<f64>,
    ) -> Result<(f64, Vec<f64>, f64)> {
        let mut tape = Tape::new();
        let pid = tape.register(self.policy.params(), true);
        let i1 = tape.register(self.q1.params(), false);
        let i2 = tape.register(self.q2.params(), false);
        let alpha = self.alpha();
        let branch = |tape: &mut Tape<'_>, x: &Array2<f64>| -> Result<(Var, Var)> {
            let s = tape.constant(x.clone());
            let (a, logp) = sample_on_tape(tape, &self.policy, pid, s, noise)?;
            let v1 = q_on_tape(tape, &self.q1, i1, s, a)?;
            let v2 = q_on_tape(tape, &self.q2, i2, s, a)?;
            let q = tape.min(v1, v2)?;
            let ent = tape.scale(logp, alpha);
            Ok((tape.sub(ent, q)?, logp))
        };
        let (l, logp) = branch(&mut tape, states)?;
        let (l, logp) = match aug_states {
            None => (l, logp),
            Some(x) => {
                let (la, logpa) = branch(&mut tape, x)?;
                (averaged(&mut tape, l, Some(la))?, averaged(&mut tape, logp, Some(logpa))?)
            }
        };
        let loss = tape.mean(l);
        let value = finite("policy loss", tape.scalar(loss))?;
        let mean_logp = tape.value(logp).mean().unwrap_or(0.0);
        let mut g = tape.backward(loss)?;
        let grad = g.take_param(pid).unwrap_or_else(|| vec![0.0; self.policy.param_count()]);
        Ok((value, grad, mean_logp))
    }

    /// Gradient of `log pi(a|s)` with respect to the policy parameters, for
    /// the action `a = tanh(mean + std * noise)` held fixed.
    pub fn log_prob_grad(&self, state: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let pre = self.policy.forward_batch(&row(state))?;
        let d = self.action_dim;
        if noise.len() != d {
            return shape_err(format!("noise has {} entries, expected {d}", noise.len()));
        }
        let u = Array2::from_shape_fn((1, d), |(_, j)| pre[[0, j]] + pre[[0, d + j]].exp() * noise[j]);
        let mut tape = Tape::new();
        let pid = tape.register(self.policy.params(), true);
        let s = tape.constant(row(state));
        let HeadOutput::Gaussian { mean, log_std } = self.policy.build(&mut tape, pid, s)? else {
            return shape_err("policy network must have a Gaussian head");
        };
        // the squash correction does not depend on the parameters once u is fixed
        let u = tape.constant(u);
        let diff = tape.sub(u, mean)?;
        let neg = tape.scale(log_std, -1.0);
        let inv_std = tape.exp(neg);
        let z = tape.mul(diff, inv_std)?;
        let z2 = tape.square(z);
        let half = tape.scale(z2, -0.5);
        let per = tape.sub(half, log_std)?;
        let total = tape.sum(per);
        let mut g = tape.backward(total)?;
        Ok(g.take_param(pid).unwrap_or_else(|| vec![0.0; self.policy.param_count()]))
    }

    /// Gradient of `Q(s, a)` with respect to the parameters of one critic.
    pub fn q_grad(&self, role: NetRole, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let net = match role {
            NetRole::Q1 => &self.q1,
            NetRole::Q2 => &self.q2,
            NetRole::Policy => return Err(Error::Input("q_grad needs a critic role".into())),
        };
        let mut tape = Tape::new();
        let id = tape.register(net.params(), true);
        let s = tape.constant(row(state));
        let a = tape.constant(row(action));
        let q = q_on_tape(&mut tape, net, id, s, a)?;
        let total = tape.sum(q);
        let mut g = tape.backward(total)?;
        Ok(g.take_param(id).unwrap_or_else(|| vec![0.0; net.param_count()]))
    }

    /// Plain SAC update (no augmentation code involved).
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        memory: Option<&MemoryBatch>,
        rng: &mut R,
        hook: &mut dyn UpdateHook,
    ) -> Result<UpdateReport> {
        let noise_next = standard_normal(batch.len(), self.action_dim, rng);
        let noise_cur = standard_normal(batch.len(), self.action_dim, rng);
        self.apply_update(batch, None, None, &noise_next, &noise_cur, memory, hook)
    }

    /// SAC update whose critic target, critic loss and policy loss are each
    /// averaged over original and augmented states. The same policy noise
    /// serves both branches, so the identity transform reproduces
    /// [`SacAgent::update`] exactly.
    pub fn augmented_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        augmenter: &mut Augmenter,
        memory: Option<&MemoryBatch>,
        rng: &mut R,
        hook: &mut dyn UpdateHook,
    ) -> Result<UpdateReport> {
        let noise_next = standard_normal(batch.len(), self.action_dim, rng);
        let noise_cur = standard_normal(batch.len(), self.action_dim, rng);
        let (aug, aug_next) = if augmenter.is_identity() {
            (batch.states.clone(), batch.next_states.clone())
        } else {
            let memory_grad = match (augmenter.kind(), memory) {
                (AugmentationKind::AdvGem, Some(m)) if !m.batch.is_empty() => {
                    let probe = PolicyLossProbe::new(self, &m.noise);
                    Some(memory_gradient(&probe, &m.batch.states)?)
                }
                _ => None,
            };
            let probe = PolicyLossProbe::new(self, &noise_cur);
            let aug = augmenter.augment_states(&batch.states, &batch.next_states, &probe, memory_grad.as_deref())?;
            let probe = PolicyLossProbe::new(self, &noise_next);
            let aug_next = augmenter.augment_next_states(&batch.next_states, &probe, memory_grad.as_deref())?;
            (aug, aug_next)
        };
        self.apply_update(batch, Some(&aug), Some(&aug_next), &noise_next, &noise_cur, memory, hook)
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_update(
        &mut self,
        batch: &Batch,
        aug: Option<&Array2<f64>>,
        aug_next: Option<&Array2<f64>>,
        noise_next: &Array2<f64>,
        noise_cur: &Array2<f64>,
        memory: Option<&MemoryBatch>,
        hook: &mut dyn UpdateHook,
    ) -> Result<UpdateReport> {
        let y = self.targets(batch, aug_next, noise_next)?;
        let (critic_loss, mut g1, mut g2) = self.critic_grads(batch, aug, &y)?;
        hook.adjust_gradient(NetRole::Q1, self, memory, &mut g1)?;
        hook.adjust_gradient(NetRole::Q2, self, memory, &mut g2)?;
        self.q1_opt.step(self.q1.params_mut(), &g1, hook.trainable(NetRole::Q1))?;
        self.q2_opt.step(self.q2.params_mut(), &g2, hook.trainable(NetRole::Q2))?;

        let (policy_loss, mut gp, mean_logp) = self.policy_grads(&batch.states, aug, noise_cur)?;
        hook.adjust_gradient(NetRole::Policy, self, memory, &mut gp)?;
        self.policy_opt
            .step(self.policy.params_mut(), &gp, hook.trainable(NetRole::Policy))?;

        if self.cfg.alpha_lr > 0.0 {
            let g_alpha = -(mean_logp + self.target_entropy);
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[g_alpha], None)?;
            self.log_alpha = finite("log alpha", la[0])?;
        }

        let tau = self.cfg.tau;
        polyak(&mut self.q1_target, &self.q1, tau);
        polyak(&mut self.q2_target, &self.q2, tau);
        self.updates += 1;
        Ok(UpdateReport {
            critic_loss,
            policy_loss,
            alpha: self.alpha(),
            mean_log_prob: mean_logp,
        })
    }

    /// Writes every network plus an `agent.json` header into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.policy.save(dir, "policy")?;
        self.q1.save(dir, "q1")?;
        self.q2.save(dir, "q2")?;
        self.q1_target.save(dir, "q1_target")?;
        self.q2_target.save(dir, "q2_target")?;
        let header = AgentHeader {
            config: self.cfg.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            log_alpha: self.log_alpha,
            target_entropy: self.target_entropy,
            updates: self.updates,
        };
        std::fs::write(dir.join("agent.json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    /// Restores networks and temperature; optimizer moments start fresh.
    pub fn load(dir: &Path) -> Result<Self> {
        let header: AgentHeader = serde_json::from_str(&std::fs::read_to_string(dir.join("agent.json"))?)?;
        let cfg = header.config;
        let policy = Network::load(dir, "policy")?;
        let q1 = Network::load(dir, "q1")?;
        let q2 = Network::load(dir, "q2")?;
        let q1_target = Network::load(dir, "q1_target")?;
        let q2_target = Network::load(dir, "q2_target")?;
        if policy.input_dim() != header.state_dim || q1.input_dim() != header.state_dim + header.action_dim {
            return shape_err("checkpoint networks disagree with the agent header");
        }
        Ok(Self {
            policy_opt: Optimizer::new(cfg.optimizer, cfg.policy_lr, policy.param_count()),
            q1_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, q1.param_count()),
            q2_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr, q2.param_count()),
            alpha_opt: Optimizer::new(cfg.optimizer, cfg.alpha_lr, 1),
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha: header.log_alpha,
            target_entropy: header.target_entropy,
            state_dim: header.state_dim,
            action_dim: header.action_dim,
            updates: header.updates,
            cfg,
        })
    }

    /// True when all network parameters and the temperature match bit for bit.
    pub fn same_parameters(&self, other: &SacAgent) -> bool {
        let bits = |n: &Network| n.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        bits(&self.policy) == bits(&other.policy)
            && bits(&self.q1) == bits(&other.q1)
            && bits(&self.q2) == bits(&other.q2)
            && bits(&self.q1_target) == bits(&other.q1_target)
            && bits(&self.q2_target) == bits(&other.q2_target)
            && self.log_alpha.to_bits() == other.log_alpha.to_bits()
    }
}

/// Acts with an arbitrary Gaussian policy network.
pub fn act_with<R: Rng + ?Sized>(policy: &Network, obs: &[f64], stochastic: bool, rng: &mut R) -> Result<Vec<f64>> {
    let out = policy.forward_batch(&row(obs))?;
    let half = out.ncols() / 2;
    let mut a = Vec::with_capacity(half);
    for j in 0..half {
        let mean = out[[0, j]];
        let u = if stochastic {
            let n: f64 = rng.sample(StandardNormal);
            mean + out[[0, half + j]].exp() * n
        } else {
            mean
        };
        a.push(u.tanh());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("policy produced a non-finite action".into()));
    }
    Ok(a)
}

/// Per-sample policy loss `alpha log pi(a|s) - min Q(s, a)` with fixed noise,
/// differentiated with respect to the states.
pub struct PolicyLossProbe<'a> {
    agent: &'a SacAgent,
    noise: &'a Array2<f64>,
}

impl<'a> PolicyLossProbe<'a> {
    pub fn new(agent: &'a SacAgent, noise: &'a Array2<f64>) -> Self {
        Self { agent, noise }
    }
}

impl LossProbe for PolicyLossProbe<'_> {
    fn loss_and_grad(&self, states: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let n = states.nrows();
        if self.noise.nrows() < n {
            return shape_err(format!("probe has noise for {} rows, got {n}", self.noise.nrows()));
        }
        let noise = self.noise.slice(s![..n, ..]).to_owned();
        let ag = self.agent;
        let mut tape = Tape::new();
        let pid = tape.register(ag.policy.params(), false);
        let i1 = tape.register(ag.q1.params(), false);
        let i2 = tape.register(ag.q2.params(), false);
        let x = tape.variable(states.clone());
        let (a, logp) = sample_on_tape(&mut tape, &ag.policy, pid, x, &noise)?;
        let v1 = q_on_tape(&mut tape, &ag.q1, i1, x, a)?;
        let v2 = q_on_tape(&mut tape, &ag.q2, i2, x, a)?;
        let q = tape.min(v1, v2)?;
        let ent = tape.scale(logp, ag.alpha());
        let per = tape.sub(ent, q)?;
        let total = tape.sum(per);
        let g = tape.backward(total)?;
        let grad = g
            .wrt(x)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(states.dim()));
        Ok((tape.value(per).column(0).to_owned(), grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SacConfig {
        SacConfig {
            hidden: vec![8],
            batch_size: 4,
            ..Default::default()
        }
    }

    fn batch() -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Batch {
            states: standard_normal(4, 3, &mut rng),
            actions: standard_normal(4, 2, &mut rng).mapv(f64::tanh),
            rewards: Array1::from(vec![0.1, -0.2, 0.3, 0.0]),
            next_states: standard_normal(4, 3, &mut rng),
            dones: Array1::from(vec![0.0, 1.0, 0.0, 0.0]),
        }
    }

    #[test]
    fn defaults() {
        let c = SacConfig::default();
        assert_eq!(c.hidden, vec![256, 256]);
        assert_eq!((c.gamma, c.tau), (0.99, 0.005));
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.buffer_capacity, 100_000);
    }

    #[test]
    fn done_cuts_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = SacAgent::new(small(), 3, 2, &mut rng).unwrap();
        let b = batch();
        let noise = standard_normal(4, 2, &mut rng);
        let y = agent.targets(&b, None, &noise).unwrap();
        assert_eq!(y[1], -0.2);
        assert_ne!(y[0], 0.1);
    }

    #[test]
    fn deterministic_action_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = SacAgent::new(small(), 3, 2, &mut rng).unwrap();
        let a = agent.act(&[0.1, 0.2, 0.3], false, &mut rng).unwrap();
        let b = agent.act(&[0.1, 0.2, 0.3], false, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn identity_augmentation_matches_plain_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = SacAgent::new(small(), 3, 2, &mut rng).unwrap();
        let (mut a, mut b) = (agent.clone(), agent);
        let bounds = crate::augment::StateBounds::new(vec![-5.0; 3], vec![5.0; 3]).unwrap();
        let mut aug = Augmenter::identity(bounds);
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(2), ChaCha8Rng::seed_from_u64(2));
        for _ in 0..3 {
            a.update(&batch(), None, &mut ra, &mut NoHook).unwrap();
            b.augmented_update(&batch(), &mut aug, None, &mut rb, &mut NoHook).unwrap();
        }
        assert!(a.same_parameters(&b));
    }

    #[test]
    fn probe_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agent = SacAgent::new(small(), 3, 2, &mut rng).unwrap();
        let noise = standard_normal(1, 2, &mut rng);
        let probe = PolicyLossProbe::new(&agent, &noise);
        let s = ndarray::array![[0.2, -0.4, 0.1]];
        let (_, g) = probe.loss_and_grad(&s).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut p = s.clone();
            p[[0, j]] += h;
            let mut m = s.clone();
            m[[0, j]] -= h;
            let fd = (probe.loss_and_grad(&p).unwrap().0[0] - probe.loss_and_grad(&m).unwrap().0[0]) / (2.0 * h);
            assert!((fd - g[[0, j]]).abs() < 1e-5 * (1.0 + fd.abs()), "dim {j}: {fd} vs {}", g[[0, j]]);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agent = SacAgent::new(small(), 3, 2, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path()).unwrap();
        let back = SacAgent::load(dir.path()).unwrap();
        assert!(agent.same_parameters(&back));
    }
}
