//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use crl_core::autodiff::{Activation, HeadOutput, Network, OutputHead, Tape, Var};
use crl_core::runner::ExperimentConfig;
use crl_core::Result;
use ndarray::Array2;
use rand::Rng;

/// A random network plus a random smooth scalar loss on its output.
#[derive(Debug, Clone)]
pub struct Instance {
    pub net: Network,
    pub input: Array2<f64>,
    /// Per-output weights of the loss.
    pub weights: Array2<f64>,
    pub loss_kind: usize,
}

pub const LOSS_KINDS: usize = 3;

pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> Instance {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=6));
    }
    let head = if rng.random_bool(0.5) {
        OutputHead::Linear
    } else {
        OutputHead::GaussianPolicy
    };
    let out = rng.random_range(1..=3);
    sizes.push(if head == OutputHead::GaussianPolicy { 2 * out } else { out });
    let activation = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let net = Network::new(&sizes, activation, head, rng).unwrap();
    let batch = rng.random_range(1..=4);
    let input = Array2::from_shape_simple_fn((batch, sizes[0]), || rng.random_range(-1.5..1.5));
    let weights = Array2::from_shape_simple_fn((batch, out), || rng.random_range(-1.0..1.0));
    Instance {
        net,
        input,
        weights,
        loss_kind: rng.random_range(0..LOSS_KINDS),
    }
}

/// Builds the instance's loss on the tape.
pub fn loss_on_tape(inst: &Instance, tape: &mut Tape<'_>, out: HeadOutput) -> Result<Var> {
    let w = tape.constant(inst.weights.clone());
    let y = match out {
        HeadOutput::Linear(y) => y,
        HeadOutput::Gaussian { mean, log_std } => {
            let std = tape.exp(log_std);
            let t = tape.tanh(mean);
            tape.add(t, std)?
        }
    };
    let z = tape.mul(y, w)?;
    let v = match inst.loss_kind {
        0 => tape.square(z),
        1 => tape.tanh(z),
        _ => {
            let s = tape.square(y);
            let s = tape.shift(s, 1.0);
            let l = tape.log(s);
            tape.mul(l, w)?
        }
    };
    Ok(tape.mean(v))
}

/// The same loss evaluated directly from a forward pass.
pub fn loss_value(inst: &Instance, net: &Network, input: &Array2<f64>) -> f64 {
    let out = net.forward_batch(input).unwrap();
    let cols = inst.weights.ncols();
    let mut total = 0.0;
    for i in 0..out.nrows() {
        for j in 0..cols {
            let y = match net.head() {
                OutputHead::Linear => out[[i, j]],
                OutputHead::GaussianPolicy => {
                    let ls = out[[i, cols + j]].clamp(
                        crl_core::autodiff::LOG_STD_MIN,
                        crl_core::autodiff::LOG_STD_MAX,
                    );
                    out[[i, j]].tanh() + ls.exp()
                }
            };
            let w = inst.weights[[i, j]];
            total += match inst.loss_kind {
                0 => (y * w).powi(2),
                1 => (y * w).tanh(),
                _ => (y * y + 1.0).ln() * w,
            };
        }
    }
    total / (out.nrows() * cols) as f64
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of the loss with respect to each parameter.
pub fn fd_param_gradient(inst: &Instance) -> Vec<f64> {
    let mut net = inst.net.clone();
    (0..net.param_count())
        .map(|k| {
            let orig = net.params()[k];
            net.params_mut()[k] = orig + FD_STEP;
            let up = loss_value(inst, &net, &inst.input);
            net.params_mut()[k] = orig - FD_STEP;
            let down = loss_value(inst, &net, &inst.input);
            net.params_mut()[k] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central finite differences with respect to each input entry, row-major.
pub fn fd_input_gradient(inst: &Instance) -> Vec<f64> {
    let mut x = inst.input.clone();
    let (rows, cols) = x.dim();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let orig = x[[i, j]];
            x[[i, j]] = orig + FD_STEP;
            let up = loss_value(inst, &inst.net, &x);
            x[[i, j]] = orig - FD_STEP;
            let down = loss_value(inst, &inst.net, &x);
            x[[i, j]] = orig;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

/// Relative errors of the analytic parameter and input gradients.
pub fn gradient_errors(inst: &Instance) -> (f64, f64) {
    let gp = inst
        .net
        .param_gradient(&inst.input, |t, o| loss_on_tape(inst, t, o))
        .unwrap();
    let gi = inst
        .net
        .input_gradient(&inst.input, |t, o| loss_on_tape(inst, t, o))
        .unwrap();
    (
        relative_error(&gp.values, &fd_param_gradient(inst)),
        relative_error(&gi.values, &fd_input_gradient(inst)),
    )
}

/// A small configuration that runs a whole TW4 sequence in seconds.
pub fn tiny_config(steps_per_task: usize, seeds: Vec<u64>, out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.steps_per_task = steps_per_task;
    cfg.experiment.seeds = seeds;
    cfg.experiment.eval_interval = (steps_per_task / 2).max(1);
    cfg.experiment.eval_episodes = 2;
    cfg.experiment.memory_budget = 64;
    cfg.experiment.output_dir = out.to_path_buf();
    cfg.sac.hidden = vec![8, 8];
    cfg.sac.batch_size = 8;
    cfg.sac.warmup_steps = (steps_per_task / 2).max(1);
    cfg.continual.fisher_samples = 16;
    cfg
}

/// A freshly initialized agent over the environment's spaces.
pub fn random_agent<R: Rng + ?Sized>(hidden: Vec<usize>, rng: &mut R) -> crl_core::sac::SacAgent {
    let cfg = crl_core::sac::SacConfig {
        hidden,
        ..Default::default()
    };
    crl_core::sac::SacAgent::new(cfg, crl_core::env::STATE_DIM, crl_core::env::ACTION_DIM, rng).unwrap()
}

/// Uniform states inside the environment's state bounds.
pub fn random_states<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let b = crl_core::env::state_bounds();
    Array2::from_shape_fn((n, b.dim()), |(_, j)| rng.random_range(b.low[j]..=b.high[j]))
}
