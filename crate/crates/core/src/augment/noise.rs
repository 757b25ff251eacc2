//! Stochastic state transforms.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};

use super::AugmentationConfig;
use crate::error::{Error, Result};

/// `s + z`, `z ~ U(-alpha, alpha)` per component.
pub fn uniform_noise<R: Rng + ?Sized>(s: &[f64], cfg: &AugmentationConfig, rng: &mut R) -> Vec<f64> {
    let a = cfg.uniform_alpha;
    s.iter()
        .map(|&x| {
            let u: f64 = rng.random();
            x + (2.0 * u - 1.0) * a
        })
        .collect()
}

/// `s + z`, `z ~ N(0, sigma^2)` per component.
pub fn gaussian_noise<R: Rng + ?Sized>(
    s: &[f64],
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, cfg.gaussian_sigma)
        .map_err(|e| Error::Config(format!("gaussian sigma: {e}")))?;
    Ok(s.iter().map(|&x| x + normal.sample(rng)).collect())
}

/// Random amplitude scaling: one scalar `z ~ U(low, high)` multiplies the
/// whole state, so component signs survive.
pub fn ras<R: Rng + ?Sized>(s: &[f64], cfg: &AugmentationConfig, rng: &mut R) -> Result<Vec<f64>> {
    if cfg.ras_low <= 0.0 {
        return Err(Error::Config(
            "ras_low must be positive to preserve signs".into(),
        ));
    }
    if cfg.ras_low > cfg.ras_high {
        return Err(Error::Config("ras_low exceeds ras_high".into()));
    }
    let z = if cfg.ras_low == cfg.ras_high {
        cfg.ras_low
    } else {
        rng.random_range(cfg.ras_low..cfg.ras_high)
    };
    Ok(scale_state(s, z))
}

pub(crate) fn scale_state(s: &[f64], z: f64) -> Vec<f64> {
    s.iter().map(|&x| x * z).collect()
}

/// Zeroes one uniformly chosen component.
pub fn dim_dropout<R: Rng + ?Sized>(s: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Shape("dimension dropout needs at least one dimension".into()));
    }
    let d = rng.random_range(0..s.len());
    Ok(drop_dimension(s, d))
}

pub(crate) fn drop_dimension(s: &[f64], d: usize) -> Vec<f64> {
    let mut out = s.to_vec();
    out[d] = 0.0;
    out
}

/// Two equally sized, index-disjoint blocks that may be exchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchPair {
    pub a: Range<usize>,
    pub b: Range<usize>,
}

pub fn validate_pairs(pairs: &[SwitchPair], dim: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Config("state switch needs at least one pair".into()));
    }
    let mut used = vec![false; dim];
    for p in pairs {
        if p.a.len() != p.b.len() || p.a.is_empty() {
            return Err(Error::Config(format!("pair {p:?} has unequal or empty blocks")));
        }
        for i in p.a.clone().chain(p.b.clone()) {
            if i >= dim {
                return Err(Error::Config(format!("pair index {i} out of range")));
            }
            if used[i] {
                return Err(Error::Config(format!("pair index {i} appears twice")));
            }
            used[i] = true;
        }
    }
    Ok(())
}

/// Exchanges the two blocks of one uniformly chosen pair.
pub fn state_switch<R: Rng + ?Sized>(s: &[f64], pairs: &[SwitchPair], rng: &mut R) -> Result<Vec<f64>> {
    validate_pairs(pairs, s.len())?;
    let k = rng.random_range(0..pairs.len());
    Ok(swap_blocks(s, &pairs[k]))
}

pub(crate) fn swap_blocks(s: &[f64], pair: &SwitchPair) -> Vec<f64> {
    let mut out = s.to_vec();
    for (i, j) in pair.a.clone().zip(pair.b.clone()) {
        out.swap(i, j);
    }
    out
}

/// `lambda * s_t + (1 - lambda) * s_next`, `lambda ~ Beta(alpha, alpha)`.
pub fn mixup<R: Rng + ?Sized>(
    s_t: &[f64],
    s_next: &[f64],
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if s_t.len() != s_next.len() {
        return Err(Error::Shape("mixup needs equally sized states".into()));
    }
    if cfg.mixup_alpha <= 0.0 {
        return Err(Error::Config("mixup_alpha must be positive".into()));
    }
    let beta = Beta::new(cfg.mixup_alpha, cfg.mixup_alpha)
        .map_err(|e| Error::Config(format!("mixup beta: {e}")))?;
    let lambda = beta.sample(rng);
    Ok(mix(s_t, s_next, lambda))
}

pub(crate) fn mix(s_t: &[f64], s_next: &[f64], lambda: f64) -> Vec<f64> {
    s_t.iter()
        .zip(s_next)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AugmentationConfig {
        AugmentationConfig::default()
    }

    #[test]
    fn zero_width_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.3, -1.2, 4.0];
        let c = AugmentationConfig {
            uniform_alpha: 0.0,
            gaussian_sigma: 0.0,
            ..cfg()
        };
        assert_eq!(uniform_noise(&s, &c, &mut rng), s.to_vec());
        assert_eq!(gaussian_noise(&s, &c, &mut rng).unwrap(), s.to_vec());
    }

    #[test]
    fn uniform_noise_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = vec![0.5; 10];
        for _ in 0..1000 {
            let out = uniform_noise(&s, &cfg(), &mut rng);
            assert!(out.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1.0));
        }
    }

    #[test]
    fn ras_arithmetic_and_errors() {
        assert_eq!(scale_state(&[2.0, -3.0], 1.1), vec![2.2, -3.3000000000000003]);
        let unit = AugmentationConfig {
            ras_low: 1.0,
            ras_high: 1.0,
            ..cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ras(&[2.0, -3.0], &unit, &mut rng).unwrap(), vec![2.0, -3.0]);
        let bad = AugmentationConfig {
            ras_low: 0.0,
            ..cfg()
        };
        assert!(matches!(ras(&[1.0], &bad, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_zeroes_exactly_one() {
        assert_eq!(drop_dimension(&[1.0, 1.0], 0), vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = [1.0, 2.0, 3.0, 4.0];
        for _ in 0..100 {
            let out = dim_dropout(&s, &mut rng).unwrap();
            assert_eq!(out.iter().zip(&s).filter(|(a, b)| a != b).count(), 1);
        }
        assert!(dim_dropout(&[], &mut rng).is_err());
    }

    #[test]
    fn switch_exchanges_blocks() {
        let pairs = [SwitchPair { a: 0..2, b: 2..4 }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.1, 0.2, 0.3, 0.4, 9.0];
        let out = state_switch(&s, &pairs, &mut rng).unwrap();
        assert_eq!(out, vec![0.3, 0.4, 0.1, 0.2, 9.0]);
        assert_eq!(swap_blocks(&out, &pairs[0]), s.to_vec());
        let same = [0.5, 0.5, 0.5, 0.5, 1.0];
        assert_eq!(state_switch(&same, &pairs, &mut rng).unwrap(), same.to_vec());
    }

    #[test]
    fn switch_rejects_overlap() {
        let pairs = [SwitchPair { a: 0..2, b: 1..3 }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            state_switch(&[0.0; 4], &pairs, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(state_switch(&[0.0; 4], &[], &mut rng).is_err());
    }

    #[test]
    fn mixup_endpoints_and_midpoint() {
        let a = [0.0, 2.0];
        let b = [2.0, 0.0];
        assert_eq!(mix(&a, &b, 1.0), a.to_vec());
        assert_eq!(mix(&a, &b, 0.0), b.to_vec());
        assert_eq!(mix(&a, &b, 0.5), vec![1.0, 1.0]);
        let bad = AugmentationConfig {
            mixup_alpha: 0.0,
            ..cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(mixup(&a, &b, &bad, &mut rng), Err(Error::Config(_))));
    }
}
