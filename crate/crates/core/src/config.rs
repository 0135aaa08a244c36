//! Sectioned TOML configuration. Every section is optional and falls back
//! to module defaults; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasetops::AugmentConfig;
use crate::enhance::{DEFAULT_ALPHA, DEFAULT_ALPHA_MAX};
use crate::error::{Error, Result};
use crate::grouping::KMeansOptions;
use crate::pso::SwarmConfig;
use crate::quality::QualityConfig;
use crate::segmath::TrainConfig;
use crate::synth::SynthConfig;

/// Environment variable naming a config file when none is given explicitly.
pub const CONFIG_ENV: &str = "GRAPHENESEG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    /// Skips tuning and uses this value.
    pub alpha: Option<f64>,
    /// Used when tuning is skipped and `alpha` is unset.
    pub default_alpha: f64,
    pub alpha_max: f64,
    /// Lower end of the search interval.
    pub alpha_min: f64,
    /// Images sampled from the manifest to score candidates.
    pub tune_sample: usize,
    /// Candidates are scored on copies resized to this (width, height).
    pub tune_size: Option<(usize, usize)>,
    /// Only images whose worst channel has at least this oversaturated
    /// fraction are corrected; 0 corrects every image.
    pub oversaturation_gate: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            alpha: None,
            default_alpha: DEFAULT_ALPHA,
            alpha_max: DEFAULT_ALPHA_MAX,
            alpha_min: 0.01,
            tune_sample: 8,
            tune_size: Some((64, 64)),
            oversaturation_gate: 0.05,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_min > 0.0 && self.alpha_min < self.alpha_max && self.alpha_max.is_finite();
        if !ok {
            return Err(Error::Config("enhance: need 0 < alpha_min < alpha_max".into()));
        }
        for a in self.alpha.iter().chain([&self.default_alpha]) {
            if !(*a > 0.0 && *a <= self.alpha_max) {
                return Err(Error::Config(format!("enhance: alpha {a} outside (0, alpha_max]")));
            }
        }
        if !(0.0..=1.0).contains(&self.oversaturation_gate) {
            return Err(Error::Config("enhance: oversaturation_gate must lie in [0, 1]".into()));
        }
        if self.tune_sample == 0 {
            return Err(Error::Config("enhance: tune_sample must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// Fixed cluster count; `None` picks by silhouette over `candidates`.
    pub k: Option<usize>,
    pub candidates: (usize, usize),
    /// Images are resized to this (width, height) before anything else.
    pub standard_size: (usize, usize),
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let km = KMeansOptions::default();
        ClusterConfig {
            k: None,
            candidates: (2, 8),
            standard_size: (256, 256),
            max_iters: km.max_iters,
            tol: km.tol,
        }
    }
}

impl ClusterConfig {
    pub fn options(&self) -> KMeansOptions {
        KMeansOptions {
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.candidates;
        if lo == 0 || lo > hi || self.k == Some(0) {
            return Err(Error::Config("cluster: cluster counts must be at least 1".into()));
        }
        if self.standard_size.0 < 3 || self.standard_size.1 < 3 {
            return Err(Error::Config("cluster: standard_size must be at least 3x3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// When set, `split` writes this many folds instead of train/test.
    pub folds: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            folds: None,
        }
    }
}

impl SplitConfig {
    pub fn proportions(&self) -> Vec<f64> {
        match self.folds {
            Some(n) => vec![1.0 / n as f64; n],
            None => vec![1.0 - self.test_fraction, self.test_fraction],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("split: test_fraction must lie in [0, 1)".into()));
        }
        if self.folds.is_some_and(|n| n < 2) {
            return Err(Error::Config("split: folds must be at least 2".into()));
        }
        Ok(())
    }
}

/// Switches for the optional pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagesConfig {
    pub enhance: bool,
    /// Tune the gamma parameter with the swarm; otherwise use the configured value.
    pub tune_alpha: bool,
    pub weak_learning: bool,
    /// Augmented copies added per training image.
    pub augment_copies: usize,
    /// Write prediction overlays next to the report.
    pub overlays: bool,
}

impl Default for StagesConfig {
    fn default() -> Self {
        StagesConfig {
            enhance: true,
            tune_alpha: true,
            weak_learning: true,
            augment_copies: 0,
            overlays: false,
        }
    }
}

/// The top-level `seed` drives every random stream of a pipeline run; the
/// `seed` fields inside `pso`, `augment` and `synth` only apply when those
/// stages are run on their own.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    pub jobs: Option<usize>,
    pub quality: QualityConfig,
    pub pso: SwarmConfig,
    pub enhance: EnhanceConfig,
    pub cluster: ClusterConfig,
    pub split: SplitConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub stages: StagesConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Explicit path first, then the environment variable, then defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(env) {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.quality.validate()?;
        self.enhance.validate()?;
        self.cluster.validate()?;
        self.split.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        // bounds come from the enhance section, so only the swarm shape is checked
        SwarmConfig {
            bounds: vec![(self.enhance.alpha_min, self.enhance.alpha_max)],
            ..self.pso.clone()
        }
        .validate()
        .map_err(|e| Error::Config(format!("pso: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 7\n[train]\nmax_iters = 20\nbeta = 0.5\n[quality]\na = 0.5\n[cluster]\nk = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.max_iters, 20);
        assert_eq!(cfg.train.beta, 0.5);
        assert_eq!(cfg.train.learning_rate, 0.1);
        assert_eq!(cfg.quality.a, 0.5);
        assert_eq!(cfg.cluster.k, Some(2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("sead = 1").is_err());
        assert!(PipelineConfig::from_toml_str("[train]\nlearning_rat = 0.1").is_err());
        assert!(PipelineConfig::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml_str("[train]\nmomentum = 1.5").is_err());
        assert!(PipelineConfig::from_toml_str("jobs = 0").is_err());
        assert!(PipelineConfig::from_toml_str("[split]\nfolds = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);
    }
}
