use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { len } else { 0 };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies one update. Entries where `trainable` is false are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], trainable: Option<&[bool]>) -> Result<()> {
        if params.len() != grad.len() {
            return shape_err(format!(
                "optimizer: {} parameters but {} gradient entries",
                params.len(),
                grad.len()
            ));
        }
        if let Some(mask) = trainable {
            if mask.len() != params.len() {
                return shape_err("optimizer: trainable mask length mismatch");
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient entry at {i}")));
        }
        let allowed = |i: usize| trainable.is_none_or(|m| m[i]);
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    if allowed(i) {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return shape_err("optimizer state was sized for another network");
                }
                self.t += 1;
                let bc1 = 1.0 - self.beta1.powi(self.t);
                let bc2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    if !allowed(i) {
                        continue;
                    }
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_matches_plain_update() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, 2);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[1.0, -1.0], None).unwrap();
        assert_eq!(p, vec![0.5, 1.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, -0.2], None).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn masked_entries_never_move() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 3);
        let mut p = vec![1.0, 2.0, 3.0];
        let mask = [true, false, true];
        for _ in 0..10 {
            opt.step(&mut p, &[1.0, 1.0, 1.0], Some(&mask)).unwrap();
        }
        assert_eq!(p[1], 2.0);
        assert!(p[0] < 1.0);
    }

    #[test]
    fn rejects_nan() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, 1);
        let mut p = vec![0.0];
        assert!(opt.step(&mut p, &[f64::NAN], None).is_err());
    }
}
