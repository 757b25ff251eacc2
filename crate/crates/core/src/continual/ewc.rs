use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::sac::{standard_normal, NetRole, ReplayBuffer, SacAgent};

/// Parameter snapshot and diagonal Fisher estimate for one finished task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcAnchor {
    pub params: Vec<f64>,
    pub fisher: Vec<f64>,
}

/// `lambda * sum_k sum_j F_kj (theta_j - theta*_kj)^2`; zero with no anchors.
pub fn ewc_penalty(lambda: f64, anchors: &[EwcAnchor], params: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for a in anchors {
        check(a, params)?;
        total += a
            .fisher
            .iter()
            .zip(&a.params)
            .zip(params)
            .map(|((f, s), p)| f * (p - s) * (p - s))
            .sum::<f64>();
    }
    Ok(lambda * total)
}

/// Gradient of [`ewc_penalty`] with respect to `params`.
pub fn ewc_penalty_grad(lambda: f64, anchors: &[EwcAnchor], params: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.len()];
    for a in anchors {
        check(a, params)?;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += 2.0 * lambda * a.fisher[j] * (params[j] - a.params[j]);
        }
    }
    Ok(g)
}

fn check(a: &EwcAnchor, params: &[f64]) -> Result<()> {
    if a.params.len() != params.len() || a.fisher.len() != params.len() {
        return shape_err(format!(
            "anchor covers {} parameters, network has {}",
            a.params.len(),
            params.len()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EwcState {
    pub lambda: f64,
    pub fisher_samples: usize,
    /// Also anchor both critics, not just the policy.
    pub anchor_critics: bool,
    policy: Vec<EwcAnchor>,
    q1: Vec<EwcAnchor>,
    q2: Vec<EwcAnchor>,
}

impl EwcState {
    pub fn new(lambda: f64, fisher_samples: usize, anchor_critics: bool) -> Self {
        Self {
            lambda,
            fisher_samples,
            anchor_critics,
            ..Default::default()
        }
    }

    pub fn anchors(&self, role: NetRole) -> &[EwcAnchor] {
        match role {
            NetRole::Policy => &self.policy,
            NetRole::Q1 => &self.q1,
            NetRole::Q2 => &self.q2,
        }
    }

    pub fn task_count(&self) -> usize {
        self.policy.len()
    }

    pub fn push_anchor(&mut self, role: NetRole, anchor: EwcAnchor) {
        match role {
            NetRole::Policy => self.policy.push(anchor),
            NetRole::Q1 => self.q1.push(anchor),
            NetRole::Q2 => self.q2.push(anchor),
        }
    }

    pub fn penalty(&self, role: NetRole, params: &[f64]) -> Result<f64> {
        ewc_penalty(self.lambda, self.anchors(role), params)
    }

    /// Adds the penalty gradient for `role` to `grad`.
    pub fn add_penalty_grad(&self, role: NetRole, params: &[f64], grad: &mut [f64]) -> Result<()> {
        let anchors = self.anchors(role);
        if anchors.is_empty() {
            return Ok(());
        }
        let g = ewc_penalty_grad(self.lambda, anchors, params)?;
        if g.len() != grad.len() {
            return shape_err("penalty gradient length mismatch");
        }
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    /// Estimates diagonal Fisher information at the current parameters from
    /// `fisher_samples` states drawn from `buffer`, then appends an anchor.
    pub fn consolidate<R: Rng + ?Sized>(&mut self, agent: &SacAgent, buffer: &ReplayBuffer, rng: &mut R) -> Result<()> {
        if buffer.is_empty() {
            return Err(Error::State("EWC consolidation needs a non-empty buffer".into()));
        }
        let n = self.fisher_samples.max(1);
        let batch = buffer.sample(n, rng)?;
        let noise = standard_normal(n, agent.action_dim(), rng);
        let states: Vec<Vec<f64>> = batch.states.rows().into_iter().map(|r| r.to_vec()).collect();
        let noise: Vec<Vec<f64>> = noise.rows().into_iter().map(|r| r.to_vec()).collect();
        let fisher = mean_square(n, agent.network(NetRole::Policy).param_count(), |i| {
            agent.log_prob_grad(&states[i], &noise[i])
        })?;
        self.policy.push(EwcAnchor {
            params: agent.network(NetRole::Policy).params().to_vec(),
            fisher,
        });
        if self.anchor_critics {
            let actions: Vec<Vec<f64>> = batch.actions.rows().into_iter().map(|r| r.to_vec()).collect();
            for role in [NetRole::Q1, NetRole::Q2] {
                let fisher = mean_square(n, agent.network(role).param_count(), |i| {
                    agent.q_grad(role, &states[i], &actions[i])
                })?;
                self.push_anchor(
                    role,
                    EwcAnchor {
                        params: agent.network(role).params().to_vec(),
                        fisher,
                    },
                );
            }
        }
        Ok(())
    }
}

/// Mean of elementwise-squared per-sample gradients.
pub fn mean_square(n: usize, len: usize, mut grad: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; len];
    for i in 0..n {
        let g = grad(i)?;
        if g.len() != len {
            return shape_err("per-sample gradient length mismatch");
        }
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v * v;
        }
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite Fisher estimate".into()));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_arithmetic() {
        let a = EwcAnchor {
            params: vec![0.0, 0.0],
            fisher: vec![0.5, 0.25],
        };
        assert_eq!(ewc_penalty(2.0, &[a.clone()], &[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(ewc_penalty(2.0, &[], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ewc_penalty(2.0, &[a.clone()], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(ewc_penalty_grad(2.0, &[a.clone()], &[1.0, 2.0]).unwrap(), vec![2.0, 2.0]);
        assert!(ewc_penalty(1.0, &[a], &[1.0]).is_err());
    }

    #[test]
    fn penalty_gradient_matches_finite_difference() {
        let anchors = vec![
            EwcAnchor {
                params: vec![0.3, -0.1, 0.7],
                fisher: vec![1.5, 0.2, 0.0],
            },
            EwcAnchor {
                params: vec![-0.4, 0.6, 0.1],
                fisher: vec![0.1, 0.9, 2.0],
            },
        ];
        let p = [0.2, 0.4, -0.3];
        let g = ewc_penalty_grad(0.7, &anchors, &p).unwrap();
        for j in 0..3 {
            let (mut hi, mut lo) = (p, p);
            hi[j] += 1e-6;
            lo[j] -= 1e-6;
            let fd = (ewc_penalty(0.7, &anchors, &hi).unwrap() - ewc_penalty(0.7, &anchors, &lo).unwrap()) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }
}
