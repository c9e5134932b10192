//! Experiment configuration, read from JSON files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use adaradar_core::loss::{LossToggles, LossWeights};
use adaradar_core::model::ModelConfig;
use adaradar_core::synth::{CubeDims, NoiseParams, DEFAULT_FG_CAP};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Epochs between learning-rate decays.
    pub step: usize,
    pub gamma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { step: 10, gamma: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Replace adaptive sampling with straight column/row folds.
    pub no_adaptive: bool,
    pub losses: LossToggles,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            no_adaptive: false,
            losses: LossToggles::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset_dir: String,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: SchedulerConfig,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset_dir: "dataset".into(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            batch_size: 6,
            lr: 1e-4,
            scheduler: SchedulerConfig::default(),
            epochs: 20,
            seed: 0,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            bail!("lr must be positive");
        }
        if self.batch_size == 0 {
            bail!("batch_size must be >= 1");
        }
        if self.scheduler.step == 0 || self.scheduler.gamma <= 0.0 {
            bail!("scheduler step must be >= 1 and gamma positive");
        }
        self.model.validate()?;
        self.loss.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub dims: CubeDims,
    pub frames: usize,
    pub classes: usize,
    pub n_samples: usize,
    pub max_objects: usize,
    pub noise: NoiseParams,
    pub fg_cap: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            dims: CubeDims { r: 64, a: 64, d: 16 },
            frames: 3,
            classes: 4,
            n_samples: 40,
            max_objects: 3,
            noise: NoiseParams {
                speckle_level: 0.3,
                ghost_count: 2,
                ghost_amplitude: 3.0,
            },
            fg_cap: DEFAULT_FG_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub train: TrainConfig,
    /// Empty rows fall back to the default matrix.
    pub rows: Vec<AblationRow>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            train: TrainConfig::default(),
            rows: Vec::new(),
        }
    }
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_deserialize_from_empty_object() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.batch_size, 6);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.scheduler.step, 10);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_overrides_apply() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"lr": 0.001, "ablation": {"no_adaptive": true}}"#).unwrap();
        assert_eq!(cfg.lr, 0.001);
        assert!(cfg.ablation.no_adaptive);
        assert!(cfg.ablation.losses.sd);
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
