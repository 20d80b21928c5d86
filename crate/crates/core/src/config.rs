//! Experiment configuration: one TOML file with a section per component.
//!
//! ```toml
//! seed = 2024
//!
//! [cohort]
//! size = 2000
//!
//! [ppo]
//! warmup_patients = 5000
//!
//! [forging]
//! regularizer_coef = 0.1
//! ```
//!
//! Only `seed` is required at the top level. Sections that a command needs
//! (`[ppo]` and `[forging]` for training) must be present; every other
//! field falls back to its default. The config hash is the SHA-256 of the
//! canonical JSON form of the fully resolved configuration plus the text of
//! any referenced data files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::CohortConfig;
use crate::distill::TreeParams;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::pkpd::IivSpec;
use crate::ppo::{ForgingConfig, PpoConfig};

/// A cohort description without the physiology spec, which comes from the
/// PK/PD parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    pub size: usize,
    /// Defaults to the master seed.
    pub seed: Option<u64>,
    pub rebalance_cyp2c9: bool,
    pub min_variant_prob: f64,
}

impl Default for CohortSection {
    fn default() -> Self {
        Self {
            size: 2000,
            seed: None,
            rebalance_cyp2c9: false,
            min_variant_prob: 0.1,
        }
    }
}

impl CohortSection {
    pub fn resolve(&self, master: u64, iiv: IivSpec) -> CohortConfig {
        CohortConfig {
            size: self.size,
            seed: self.seed.unwrap_or(master),
            rebalance_cyp2c9: self.rebalance_cyp2c9,
            min_variant_prob: self.min_variant_prob,
            iiv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingCohortSection {
    pub rebalance_cyp2c9: bool,
    pub min_variant_prob: f64,
}

impl Default for TrainingCohortSection {
    fn default() -> Self {
        Self {
            rebalance_cyp2c9: true,
            min_variant_prob: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Seed of the measurement-noise streams; defaults to the master seed.
    pub seed: Option<u64>,
    /// Trajectories written to the plot-data file.
    pub plot_patients: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            seed: None,
            plot_patients: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Patients the teacher is run on to build the dataset.
    pub cohort_size: usize,
    /// Defaults to the master seed plus one, so the dataset cohort differs
    /// from the evaluation cohort.
    pub cohort_seed: Option<u64>,
}

impl Default for DistillSection {
    fn default() -> Self {
        let t = TreeParams::default();
        Self {
            max_depth: t.max_depth,
            min_leaf: t.min_leaf,
            cohort_size: 2000,
            cohort_seed: None,
        }
    }
}

impl DistillSection {
    pub fn tree(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// PK/PD parameter file; the bundled set when absent.
    pub pkpd_params: Option<PathBuf>,
    /// Genotype to sensitivity-class table; the bundled one when absent.
    pub sensitivity_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub cohort: CohortSection,
    #[serde(default)]
    pub training_cohort: TrainingCohortSection,
    #[serde(default)]
    pub env: EnvConfig,
    pub ppo: Option<PpoConfig>,
    pub forging: Option<ForgingConfig>,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub model: ModelSection,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            cohort: CohortSection::default(),
            training_cohort: TrainingCohortSection::default(),
            env: EnvConfig::default(),
            ppo: None,
            forging: None,
            distill: DistillSection::default(),
            evaluation: EvaluationSection::default(),
            model: ModelSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Data-file paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.model.pkpd_params, &mut cfg.model.sensitivity_map]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort.size == 0 {
            return Err(Error::config("cohort.size must be positive"));
        }
        self.env.validate()?;
        if let Some(p) = &self.ppo {
            p.validate()?;
        }
        if let Some(f) = &self.forging {
            f.validate()?;
        }
        if self.distill.min_leaf == 0 {
            return Err(Error::config("distill.min_leaf must be positive"));
        }
        if self.distill.cohort_size == 0 {
            return Err(Error::config("distill.cohort_size must be positive"));
        }
        Ok(())
    }

    pub fn ppo(&self) -> Result<&PpoConfig> {
        self.ppo
            .as_ref()
            .ok_or_else(|| Error::config("missing config section [ppo]"))
    }

    pub fn forging(&self) -> Result<&ForgingConfig> {
        self.forging
            .as_ref()
            .ok_or_else(|| Error::config("missing config section [forging]"))
    }

    pub fn distill_seed(&self) -> u64 {
        self.distill.cohort_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn eval_seed(&self) -> u64 {
        self.evaluation.seed.unwrap_or(self.seed)
    }

    /// JSON with every default filled in; field order is fixed by the types.
    pub fn canonical(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Hex SHA-256 over the canonical form and the given data-file texts.
    pub fn hash(&self, data_files: &[&str]) -> Result<String> {
        let mut h = Sha256::new();
        let canonical = self.canonical()?;
        h.update((canonical.len() as u64).to_le_bytes());
        h.update(canonical.as_bytes());
        for d in data_files {
            h.update((d.len() as u64).to_le_bytes());
            h.update(d.as_bytes());
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse("seed = 7\n").unwrap();
        assert_eq!(cfg.cohort.size, 2000);
        assert_eq!(cfg.env, EnvConfig::default());
        assert!(cfg.ppo.is_none());
        assert!(cfg.training_cohort.rebalance_cyp2c9);
        assert_eq!(cfg.distill.tree(), TreeParams::default());
        assert_eq!(cfg.distill_seed(), 8);
        assert_eq!(cfg.eval_seed(), 7);
    }

    #[test]
    fn missing_seed_is_named() {
        let err = ExperimentConfig::parse("[cohort]\nsize = 10\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_section_is_named() {
        let cfg = ExperimentConfig::parse("seed = 1\n").unwrap();
        assert!(cfg.ppo().unwrap_err().to_string().contains("[ppo]"));
        assert!(cfg.forging().unwrap_err().to_string().contains("[forging]"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse("seed = 1\n[ppo]\nclip = 0.3\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\nsede = 2\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n[distill]\ndepth = 2\n").is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
seed = 3
[env.reward]
clip_low = -inf
[ppo]
warmup_patients = 5000
[ppo.actor_lr]
initial = 2e-4
decay = 0.8
step_size = 1000
staircase = true
[forging]
regularizer_coef = 0.1
action_focus = true
[forging.wavelet]
u = 0.3
d = -0.1
r = 1.0
[distill]
max_depth = 3
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.env.reward.clip_low, Some(f64::NEG_INFINITY));
        assert_eq!(cfg.ppo().unwrap().warmup_patients, 5000);
        assert_eq!(cfg.ppo().unwrap().actor_lr.initial, 2e-4);
        assert_eq!(cfg.ppo().unwrap().critic_iters, 80);
        assert_eq!(cfg.forging().unwrap().wavelet.u, 0.3);
        assert_eq!(cfg.distill.max_depth, 3);
        assert_eq!(cfg.distill.min_leaf, 50);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::parse("seed = 1\n").unwrap();
        let b = ExperimentConfig::parse("seed = 1\n[cohort]\nsize = 2000\n").unwrap();
        let c = ExperimentConfig::parse("seed = 2\n").unwrap();
        assert_eq!(a.hash(&[]).unwrap(), b.hash(&[]).unwrap());
        assert_ne!(a.hash(&[]).unwrap(), c.hash(&[]).unwrap());
        assert_ne!(a.hash(&["x"]).unwrap(), a.hash(&["y"]).unwrap());
        assert_eq!(a.hash(&[]).unwrap().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::with_seed(9);
        cfg.ppo = Some(PpoConfig::default());
        cfg.forging = Some(ForgingConfig::default());
        let back = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = ExperimentConfig::parse("seed = 1\n[cohort]\nsize = 0\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::parse("seed = 1\n[ppo]\ngamma = 2.0\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
