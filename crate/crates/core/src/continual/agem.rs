use crate::autodiff::{GradientSpace, GradientVector};
use crate::error::{shape_err, Result};

/// Projects `g` so that it no longer conflicts with `g_ref`:
/// `g - (g.g_ref / g_ref.g_ref) g_ref` when `g.g_ref < 0`, else `g`.
pub fn agem_project(g: &GradientVector, g_ref: &GradientVector) -> Result<GradientVector> {
    if g.space != GradientSpace::Parameter || g_ref.space != GradientSpace::Parameter {
        return shape_err("A-GEM projects parameter-space gradients only");
    }
    if g.len() != g_ref.len() {
        return shape_err(format!(
            "gradient lengths {} and {} differ",
            g.len(),
            g_ref.len()
        ));
    }
    let mut out = g.values.clone();
    project_in_place(&mut out, &g_ref.values);
    Ok(GradientVector::parameter(out))
}

pub(crate) fn project_in_place(g: &mut [f64], g_ref: &[f64]) {
    let dot = |g: &[f64]| -> f64 { g.iter().zip(g_ref).map(|(a, b)| a * b).sum() };
    let norm: f64 = g_ref.iter().map(|v| v * v).sum();
    // the first pass is the exact projection; later passes only absorb
    // rounding so that the result satisfies `g.g_ref >= 0` exactly and a
    // second projection is a no-op
    let mut scale = 1.0;
    for _ in 0..64 {
        let d = dot(g);
        if d >= 0.0 {
            return;
        }
        // d < 0 implies g_ref is non-zero
        let c = scale * d / norm;
        for (x, r) in g.iter_mut().zip(g_ref) {
            *x -= c * r;
        }
        scale *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> GradientVector {
        GradientVector::parameter(v.to_vec())
    }

    #[test]
    fn worked_examples() {
        assert_eq!(agem_project(&p(&[1.0, 0.0]), &p(&[0.0, 1.0])).unwrap().values, vec![1.0, 0.0]);
        assert_eq!(agem_project(&p(&[1.0, -1.0]), &p(&[0.0, 1.0])).unwrap().values, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_reference_passes_through() {
        assert_eq!(agem_project(&p(&[1.0, -1.0]), &p(&[0.0, 0.0])).unwrap().values, vec![1.0, -1.0]);
    }

    #[test]
    fn rejects_input_space_and_length() {
        let i = GradientVector::input(vec![1.0]);
        assert!(agem_project(&i, &p(&[1.0])).is_err());
        assert!(agem_project(&p(&[1.0]), &p(&[1.0, 2.0])).is_err());
    }
}
