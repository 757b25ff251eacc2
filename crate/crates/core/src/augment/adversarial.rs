//! Gradient-sign perturbations of states: FGSM, PGD and the memory-gated
//! variant driven by the episodic-memory gradient.

use ndarray::{Array1, Array2, Axis};

use super::{AugmentationConfig, StateBounds};
use crate::error::{Error, Result};

/// Evaluates a per-sample loss and its gradient with respect to each state row.
pub trait LossProbe {
    fn loss_and_grad(&self, states: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)>;
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_finite(g: &Array2<f64>) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite state gradient".into()))
    }
}

fn state_grad(probe: &dyn LossProbe, states: &Array2<f64>) -> Result<Array2<f64>> {
    let (_, g) = probe.loss_and_grad(states)?;
    if g.dim() != states.dim() {
        return Err(Error::Shape(format!(
            "probe returned gradient of shape {:?} for states {:?}",
            g.dim(),
            states.dim()
        )));
    }
    check_finite(&g)?;
    Ok(g)
}

/// Clips `x` into `[origin - eps, origin + eps]` so that the rounded
/// difference `x - origin` never exceeds `eps`, then into the state bounds.
pub fn project(x: f64, origin: f64, eps: f64, low: f64, high: f64) -> f64 {
    let mut y = x.clamp(origin - eps, origin + eps);
    while y - origin > eps {
        y = y.next_down();
    }
    while origin - y > eps {
        y = y.next_up();
    }
    y.clamp(low, high)
}

/// One unprojected signed step: `s + eps * sign(grad)`.
pub fn fgsm(states: &Array2<f64>, probe: &dyn LossProbe, eps: f64) -> Result<Array2<f64>> {
    let g = state_grad(probe, states)?;
    Ok(fgsm_from_grad(states, &g, eps))
}

pub fn fgsm_from_grad(states: &Array2<f64>, grad: &Array2<f64>, eps: f64) -> Array2<f64> {
    let mut out = states.clone();
    out.zip_mut_with(grad, |x, &g| *x += eps * sign(g));
    out
}

/// `k` steps of size `eps / k`, each projected back into the `eps` ball
/// around the original states and into the state bounds.
pub fn adv_aug(
    states: &Array2<f64>,
    probe: &dyn LossProbe,
    cfg: &AugmentationConfig,
    bounds: &StateBounds,
) -> Result<Array2<f64>> {
    if cfg.pgd_iters == 0 {
        return Err(Error::Config("pgd_iters must be at least 1".into()));
    }
    bounds.check_width(states.ncols())?;
    let eps = cfg.epsilon;
    let step = eps / cfg.pgd_iters as f64;
    let mut x = states.clone();
    for _ in 0..cfg.pgd_iters {
        let g = state_grad(probe, &x)?;
        let mut next = fgsm_from_grad(&x, &g, step);
        project_batch(&mut next, states, eps, bounds);
        x = next;
    }
    Ok(x)
}

fn project_batch(x: &mut Array2<f64>, origin: &Array2<f64>, eps: f64, bounds: &StateBounds) {
    for (mut row, orow) in x.rows_mut().into_iter().zip(origin.rows()) {
        for (j, (v, &o)) in row.iter_mut().zip(orow.iter()).enumerate() {
            *v = project(*v, o, eps, bounds.low[j], bounds.high[j]);
        }
    }
}

/// Mean over memory rows of the per-sample state gradients.
pub fn memory_gradient(probe: &dyn LossProbe, memory_states: &Array2<f64>) -> Result<Vec<f64>> {
    if memory_states.nrows() == 0 {
        return Err(Error::Input("memory batch is empty".into()));
    }
    let g = state_grad(probe, memory_states)?;
    Ok(g.mean_axis(Axis(0)).expect("nonempty").to_vec())
}

/// Memory-gated adversarial states. `memory_states` may have zero rows, in
/// which case every gate is open.
pub fn adv_gem(
    states: &Array2<f64>,
    memory_states: &Array2<f64>,
    probe: &dyn LossProbe,
    cfg: &AugmentationConfig,
    bounds: &StateBounds,
) -> Result<Array2<f64>> {
    if memory_states.nrows() > 0 && memory_states.ncols() != states.ncols() {
        return Err(Error::Shape(format!(
            "memory states have {} dimensions, current states {}",
            memory_states.ncols(),
            states.ncols()
        )));
    }
    let reference = if memory_states.nrows() > 0 {
        Some(memory_gradient(probe, memory_states)?)
    } else {
        None
    };
    adv_gem_with_reference(states, reference.as_deref(), probe, cfg, bounds)
}

/// [`adv_gem`] with a precomputed memory gradient.
pub fn adv_gem_with_reference(
    states: &Array2<f64>,
    memory_grad: Option<&[f64]>,
    probe: &dyn LossProbe,
    cfg: &AugmentationConfig,
    bounds: &StateBounds,
) -> Result<Array2<f64>> {
    let g = state_grad(probe, states)?;
    gated_step(states, &g, memory_grad, cfg.epsilon, bounds)
}

/// Applies the Heaviside gate `H(g_mem . g_i)` (with `H(0) = 1`) row by row:
/// open rows take a projected `eps * sign(g_i)` step, closed rows are
/// returned unchanged.
pub fn gated_step(
    states: &Array2<f64>,
    grads: &Array2<f64>,
    memory_grad: Option<&[f64]>,
    eps: f64,
    bounds: &StateBounds,
) -> Result<Array2<f64>> {
    bounds.check_width(states.ncols())?;
    if grads.dim() != states.dim() {
        return Err(Error::Shape("gradient and state batches differ in shape".into()));
    }
    if let Some(m) = memory_grad {
        if m.len() != states.ncols() {
            return Err(Error::Shape(format!(
                "memory gradient has {} entries, states have {} dimensions",
                m.len(),
                states.ncols()
            )));
        }
    }
    check_finite(grads)?;
    let mut out = states.clone();
    for ((mut row, grow), orow) in out
        .rows_mut()
        .into_iter()
        .zip(grads.rows())
        .zip(states.rows())
    {
        let open = match memory_grad {
            Some(m) => m.iter().zip(grow.iter()).map(|(a, b)| a * b).sum::<f64>() >= 0.0,
            None => true,
        };
        if !open {
            continue;
        }
        for (j, ((v, &gd), &o)) in row.iter_mut().zip(grow.iter()).zip(orow.iter()).enumerate() {
            let stepped = o + eps * sign(gd);
            *v = project(stepped, o, eps, bounds.low[j], bounds.high[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Linear(Vec<f64>);

    impl LossProbe for Linear {
        fn loss_and_grad(&self, states: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
            let w = Array1::from(self.0.clone());
            let loss = states.dot(&w);
            let g = Array2::from_shape_fn(states.dim(), |(_, j)| self.0[j]);
            Ok((loss, g))
        }
    }

    fn wide() -> StateBounds {
        StateBounds::new(vec![-10.0; 3], vec![10.0; 3]).unwrap()
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-3.0), -1.0);
    }

    #[test]
    fn fgsm_worked_example() {
        let s = Array2::zeros((1, 3));
        let out = fgsm(&s, &Linear(vec![3.0, -2.0, 0.0]), 0.1).unwrap();
        assert_eq!(out, array![[0.1, -0.1, 0.0]]);
        let flat = fgsm(&s, &Linear(vec![0.0; 3]), 0.1).unwrap();
        assert_eq!(flat, s);
    }

    #[test]
    fn pgd_zero_eps_is_identity() {
        let s = array![[0.3, -0.2, 0.7]];
        let cfg = AugmentationConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        let out = adv_aug(&s, &Linear(vec![1.0, 1.0, -1.0]), &cfg, &wide()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn pgd_stays_in_ball_with_many_steps() {
        let s = array![[0.3, -0.2, 0.7]];
        let cfg = AugmentationConfig {
            epsilon: 0.1,
            pgd_iters: 7,
            ..Default::default()
        };
        let out = adv_aug(&s, &Linear(vec![1.0, -1.0, 0.5]), &cfg, &wide()).unwrap();
        for (a, b) in out.iter().zip(s.iter()) {
            assert!((a - b).abs() <= 0.1);
        }
        // constant-sign gradient walks to the ball edge
        assert!((out[[0, 0]] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn projection_respects_bounds() {
        let b = StateBounds::new(vec![-1.0], vec![1.0]).unwrap();
        let s = array![[0.95]];
        let cfg = AugmentationConfig::default();
        let out = adv_aug(&s, &Linear(vec![1.0]), &cfg, &b).unwrap();
        assert_eq!(out[[0, 0]], 1.0);
    }

    #[test]
    fn projection_never_rounds_outside_ball() {
        // 0.3 + 0.1 rounds to a value whose difference from 0.3 exceeds 0.1
        let x = 0.3_f64 + 0.1;
        assert!(x - 0.3 > 0.1);
        let p = project(x, 0.3, 0.1, -10.0, 10.0);
        assert!(p - 0.3 <= 0.1);
    }

    #[test]
    fn gate_closed_and_open() {
        let s = array![[0.0, 0.0]];
        let g = array![[2.0, -3.0]];
        let b = StateBounds::new(vec![-5.0; 2], vec![5.0; 2]).unwrap();
        let closed = gated_step(&s, &g, Some(&[1.0, 1.0]), 0.1, &b).unwrap();
        assert_eq!(closed, s);
        let open = gated_step(&s, &g, Some(&[1.0, 0.0]), 0.1, &b).unwrap();
        assert_eq!(open, array![[0.1, -0.1]]);
        // orthogonal directions keep the perturbation
        let ortho = gated_step(&s, &g, Some(&[3.0, 2.0]), 0.1, &b).unwrap();
        assert_eq!(ortho, array![[0.1, -0.1]]);
    }

    #[test]
    fn gem_rejects_mismatched_memory() {
        let s = array![[0.0, 0.0, 0.0]];
        let m = array![[0.0, 0.0]];
        let err = adv_gem(&s, &m, &Linear(vec![1.0; 3]), &AugmentationConfig::default(), &wide());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn nan_gradient_is_numeric_error() {
        let s = array![[0.0, 0.0, 0.0]];
        let err = fgsm(&s, &Linear(vec![f64::NAN, 0.0, 0.0]), 0.1);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
