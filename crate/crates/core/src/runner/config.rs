use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationConfig;
use crate::continual::ContinualConfig;
use crate::env::SequenceName;
use crate::error::{Error, Result};
use crate::sac::SacConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub sequence: SequenceName,
    pub steps_per_task: usize,
    pub seeds: Vec<u64>,
    /// Seeds the task layout; shared by every training seed.
    pub sequence_seed: u64,
    pub memory_budget: usize,
    pub reset_buffer_per_task: bool,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Single-task reference curves used for forward transfer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_curves: Option<PathBuf>,
    /// Stop a reference run once this success rate is reached.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_stop_at: Option<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            sequence: SequenceName::TW4,
            steps_per_task: 20_000,
            seeds: vec![0, 1, 2, 3, 4],
            sequence_seed: 0,
            memory_budget: crate::augment::DEFAULT_MEMORY_BUDGET,
            reset_buffer_per_task: true,
            eval_interval: 1000,
            eval_episodes: 10,
            reference_curves: None,
            reference_stop_at: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Full experiment description, read from a sectioned TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub sac: SacConfig,
    pub augmentation: AugmentationConfig,
    pub continual: ContinualConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.steps_per_task == 0 {
            return Err(Error::Config("steps_per_task must be positive".into()));
        }
        if e.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if e.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        if let Some(p) = e.reference_stop_at {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("reference_stop_at must lie in [0, 1]".into()));
            }
        }
        self.sac.validate()?;
        self.augmentation.validate()?;
        self.continual.validate()?;
        Ok(())
    }

    /// Sorted-key TOML with LF line endings. The output directory is left
    /// out so that relocating a run does not change its identity.
    pub fn canonical_string(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(exp) = v.get_mut("experiment").and_then(|e| e.as_object_mut()) {
            exp.remove("output_dir");
        }
        let s = toml::to_string(&v).map_err(|e| Error::Config(format!("serializing config: {e}")))?;
        Ok(s.replace("\r\n", "\n"))
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_string`].
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.canonical_string()?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }

    /// Short label such as `ewc+adv_gem`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.continual.method, self.augmentation.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.experiment.steps_per_task, 20_000);
        assert_eq!(c.experiment.seeds.len(), 5);
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = ExperimentConfig::from_toml_str(
            "[experiment]\nsequence = \"TW10\"\nseeds = [3]\n[augmentation]\nkind = \"adv_gem\"\nepsilon = 0.01\n[continual]\nmethod = \"ewc\"\n",
        )
        .unwrap();
        assert_eq!(c.experiment.sequence, SequenceName::TW10);
        assert_eq!(c.label(), "ewc+adv_gem");
        assert!(ExperimentConfig::from_toml_str("[sac]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[experiment]\nseeds = []\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.experiment.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let s = a.canonical_string().unwrap();
        assert!(!s.contains('\r'));
        let back = ExperimentConfig::from_toml_str(&s).unwrap();
        assert_eq!(back.hash().unwrap(), a.hash().unwrap());
        b.sac.gamma = 0.9;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
