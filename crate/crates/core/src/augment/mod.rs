//! State augmentation transforms and the episodic memory used by the
//! memory-gated adversarial transform.

mod adversarial;
mod memory;
mod noise;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adversarial::{
    adv_aug, adv_gem, adv_gem_with_reference, fgsm, fgsm_from_grad, gated_step, memory_gradient,
    project, sign, LossProbe,
};
pub use memory::{EpisodicMemory, DEFAULT_MEMORY_BUDGET};
pub use noise::{
    dim_dropout, gaussian_noise, mixup, ras, state_switch, uniform_noise, validate_pairs,
    SwitchPair,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    #[default]
    None,
    Uniform,
    Gaussian,
    Ras,
    DimDropout,
    StateSwitch,
    Mixup,
    AdvAug,
    AdvGem,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 9] = [
        AugmentationKind::None,
        AugmentationKind::Uniform,
        AugmentationKind::Gaussian,
        AugmentationKind::Ras,
        AugmentationKind::DimDropout,
        AugmentationKind::StateSwitch,
        AugmentationKind::Mixup,
        AugmentationKind::AdvAug,
        AugmentationKind::AdvGem,
    ];

    pub fn is_adversarial(self) -> bool {
        matches!(self, AugmentationKind::AdvAug | AugmentationKind::AdvGem)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationKind::None => "none",
            AugmentationKind::Uniform => "uniform",
            AugmentationKind::Gaussian => "gaussian",
            AugmentationKind::Ras => "ras",
            AugmentationKind::DimDropout => "dim_dropout",
            AugmentationKind::StateSwitch => "state_switch",
            AugmentationKind::Mixup => "mixup",
            AugmentationKind::AdvAug => "adv_aug",
            AugmentationKind::AdvGem => "adv_gem",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation {s:?}")))
    }
}

/// Augmentation hyperparameters; defaults follow the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub kind: AugmentationKind,
    pub uniform_alpha: f64,
    pub gaussian_sigma: f64,
    pub ras_low: f64,
    pub ras_high: f64,
    pub mixup_alpha: f64,
    pub epsilon: f64,
    pub pgd_iters: usize,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            kind: AugmentationKind::None,
            uniform_alpha: 1.0,
            gaussian_sigma: 1.0,
            ras_low: 0.9,
            ras_high: 1.1,
            mixup_alpha: 0.4,
            epsilon: 0.1,
            pgd_iters: 1,
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn with_kind(kind: AugmentationKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.ras_low > self.ras_high {
            return bad("ras_low must not exceed ras_high");
        }
        if self.kind == AugmentationKind::Ras && self.ras_low <= 0.0 {
            return bad("ras_low must be positive");
        }
        if self.kind == AugmentationKind::Mixup && self.mixup_alpha <= 0.0 {
            return bad("mixup_alpha must be positive");
        }
        if self.kind.is_adversarial() && !(self.epsilon > 0.0) {
            return bad("epsilon must be positive for adversarial augmentation");
        }
        if self.pgd_iters == 0 {
            return bad("pgd_iters must be at least 1");
        }
        if self.uniform_alpha < 0.0 || self.gaussian_sigma < 0.0 {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }
}

/// Per-dimension box the adversarial transforms project into.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl StateBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::Shape("bounds differ in length".into()));
        }
        if low.iter().zip(&high).any(|(l, h)| l > h) {
            return Err(Error::Config("lower bound above upper bound".into()));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub(crate) fn check_width(&self, width: usize) -> Result<()> {
        if width != self.dim() {
            return Err(Error::Shape(format!(
                "states have {width} dimensions, bounds cover {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Applies the configured transform to batches, owning its random stream.
#[derive(Debug, Clone)]
pub struct Augmenter {
    cfg: AugmentationConfig,
    bounds: StateBounds,
    pairs: Vec<SwitchPair>,
    rng: ChaCha8Rng,
}

impl Augmenter {
    pub fn new(cfg: AugmentationConfig, bounds: StateBounds, pairs: Vec<SwitchPair>) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind == AugmentationKind::StateSwitch {
            validate_pairs(&pairs, bounds.dim())?;
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        Ok(Self {
            cfg,
            bounds,
            pairs,
            rng,
        })
    }

    /// Pass-through transform.
    pub fn identity(bounds: StateBounds) -> Self {
        Self::new(AugmentationConfig::default(), bounds, Vec::new()).expect("default config is valid")
    }

    pub fn kind(&self) -> AugmentationKind {
        self.cfg.kind
    }

    pub fn config(&self) -> &AugmentationConfig {
        &self.cfg
    }

    pub fn bounds(&self) -> &StateBounds {
        &self.bounds
    }

    pub fn is_identity(&self) -> bool {
        self.cfg.kind == AugmentationKind::None
    }

    fn map_rows(
        &mut self,
        states: &Array2<f64>,
        mut f: impl FnMut(&[f64], usize, &mut ChaCha8Rng) -> Result<Vec<f64>>,
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(states.dim());
        for (i, (src, mut dst)) in states.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let v = f(&src.to_vec(), i, &mut self.rng)?;
            dst.assign(&ndarray::ArrayView1::from(&v[..]));
        }
        Ok(out)
    }

    /// Augments current states. `next_states` supplies the mixup partners;
    /// `probe` drives the adversarial kinds; `memory_grad` is the episodic
    /// memory gradient for the gated kind (`None` opens every gate).
    pub fn augment_states(
        &mut self,
        states: &Array2<f64>,
        next_states: &Array2<f64>,
        probe: &dyn LossProbe,
        memory_grad: Option<&[f64]>,
    ) -> Result<Array2<f64>> {
        let cfg = self.cfg.clone();
        match cfg.kind {
            AugmentationKind::Mixup => {
                if next_states.dim() != states.dim() {
                    return Err(Error::Shape("mixup partners differ in shape".into()));
                }
                self.map_rows(states, |s, i, rng| {
                    let partner = next_states.row(i).to_vec();
                    mixup(s, &partner, &cfg, rng)
                })
            }
            _ => self.augment_single(states, probe, memory_grad),
        }
    }

    /// Augments next states. Mixup leaves them untouched.
    pub fn augment_next_states(
        &mut self,
        next_states: &Array2<f64>,
        probe: &dyn LossProbe,
        memory_grad: Option<&[f64]>,
    ) -> Result<Array2<f64>> {
        match self.cfg.kind {
            AugmentationKind::Mixup => Ok(next_states.clone()),
            _ => self.augment_single(next_states, probe, memory_grad),
        }
    }

    fn augment_single(
        &mut self,
        states: &Array2<f64>,
        probe: &dyn LossProbe,
        memory_grad: Option<&[f64]>,
    ) -> Result<Array2<f64>> {
        let cfg = self.cfg.clone();
        match cfg.kind {
            AugmentationKind::None => Ok(states.clone()),
            AugmentationKind::Uniform => {
                self.map_rows(states, |s, _, rng| Ok(uniform_noise(s, &cfg, rng)))
            }
            AugmentationKind::Gaussian => {
                self.map_rows(states, |s, _, rng| gaussian_noise(s, &cfg, rng))
            }
            AugmentationKind::Ras => self.map_rows(states, |s, _, rng| ras(s, &cfg, rng)),
            AugmentationKind::DimDropout => self.map_rows(states, |s, _, rng| dim_dropout(s, rng)),
            AugmentationKind::StateSwitch => {
                let pairs = self.pairs.clone();
                self.map_rows(states, |s, _, rng| state_switch(s, &pairs, rng))
            }
            AugmentationKind::Mixup => Ok(states.clone()),
            AugmentationKind::AdvAug => adv_aug(states, probe, &cfg, &self.bounds),
            AugmentationKind::AdvGem => {
                adv_gem_with_reference(states, memory_grad, probe, &cfg, &self.bounds)
            }
        }
    }
}
