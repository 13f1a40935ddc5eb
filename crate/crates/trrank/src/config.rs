//! Run configuration and manifests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trrank_core::progressive::{LayerSpec, PhaseConfig, RankBounds, SearchSpace};
use trrank_core::tr_models::{SyntheticConfig, TrainConfig};
use trrank_core::{Error, Result, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode_dims: Vec<usize>,
    pub alpha: usize,
    pub beta: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode_dims: vec![12, 12, 12, 12],
            alpha: 2,
            beta: 2,
        }
    }
}

impl ModelConfig {
    pub fn layer(&self) -> Result<LayerSpec> {
        if self.alpha == 0 || self.beta == 0 || self.alpha + self.beta != self.mode_dims.len() {
            return Err(Error::Config(format!(
                "alpha + beta must equal the {} mode dims, with both at least 1 (alpha = {}, beta = {})",
                self.mode_dims.len(),
                self.alpha,
                self.beta
            )));
        }
        Ok(LayerSpec {
            in_factors: Shape::new(self.mode_dims[..self.alpha].to_vec())?,
            out_factors: Shape::new(self.mode_dims[self.alpha..].to_vec())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumerationConfig {
    /// Candidate values for every element; `None` means every value in the
    /// rank bounds.
    pub candidates: Option<Vec<usize>>,
    pub cap: u64,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            candidates: None,
            cap: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InheritanceConfig {
    pub layers: usize,
    pub warmup_epochs: usize,
    pub finetune_epochs: usize,
}

impl Default for InheritanceConfig {
    fn default() -> Self {
        InheritanceConfig {
            layers: 2,
            warmup_epochs: 30,
            finetune_epochs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// GA seeds; each seed runs both methods.
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { seeds: vec![233] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: SyntheticConfig,
    pub model: ModelConfig,
    pub bounds: RankBounds,
    pub search: PhaseConfig,
    pub train: TrainConfig,
    /// Base for the per-genome training seeds.
    pub training_seed: u64,
    pub enumeration: EnumerationConfig,
    pub inheritance: InheritanceConfig,
    pub ablation: AblationConfig,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    /// Store per-evaluation wall-clock seconds in the logs. Off by default
    /// so that reruns are byte-identical.
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: SyntheticConfig::default(),
            model: ModelConfig::default(),
            bounds: RankBounds { min: 3, max: 15 },
            search: PhaseConfig::default(),
            train: TrainConfig::default(),
            training_seed: 233,
            enumeration: EnumerationConfig::default(),
            inheritance: InheritanceConfig::default(),
            ablation: AblationConfig::default(),
            threads: None,
            record_wall_clock: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        RankBounds::new(self.bounds.min, self.bounds.max)?;
        let layer = self.model.layer()?;
        let dim: usize = layer.in_factors.numel();
        if dim != self.dataset.dim || layer.out_factors.numel() != self.dataset.dim {
            return Err(Error::Config(format!(
                "model maps {} -> {} but the dataset dimension is {}",
                dim,
                layer.out_factors.numel(),
                self.dataset.dim
            )));
        }
        self.search.validate()?;
        self.train.validate()?;
        if self.enumeration.candidates.is_some() {
            self.enumeration_space()?;
        }
        if self.inheritance.layers == 0 || self.inheritance.finetune_epochs == 0 {
            return Err(Error::Config("inheritance needs at least one layer and one fine-tune epoch".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn enumeration_space(&self) -> Result<SearchSpace> {
        let d = self.model.mode_dims.len();
        match &self.enumeration.candidates {
            Some(c) => {
                let mut c = c.clone();
                c.sort_unstable();
                c.dedup();
                SearchSpace::new(vec![c; d], self.bounds)
            }
            None => SearchSpace::full(d, self.bounds),
        }
    }

    pub fn training_for(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            ..self.train.clone()
        }
    }
}

/// Everything needed to repeat a run. Paths and timestamps are left out on
/// purpose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    pub inheritance: bool,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, inheritance: bool, config: &RunConfig) -> Self {
        Manifest {
            manifest_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inheritance,
            config: config.clone(),
        }
    }
}

/// Reads either a bare [`RunConfig`] or a [`Manifest`] written by a previous
/// run.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let raw = fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = if value.get("manifest_version").is_some() {
        serde_json::from_value::<Manifest>(value).map(|m| m.config)
    } else {
        serde_json::from_value::<RunConfig>(value)
    }
    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        let nested = serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 0.1}}"#);
        assert!(nested.is_err());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"bounds": {"min": 3, "max": 8}}"#).unwrap();
        assert_eq!(cfg.bounds, RankBounds { min: 3, max: 8 });
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn model_must_match_dataset() {
        let cfg = RunConfig {
            model: ModelConfig { mode_dims: vec![4, 4], alpha: 1, beta: 1 },
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let bad_split = RunConfig {
            model: ModelConfig { mode_dims: vec![12, 12, 12, 12], alpha: 3, beta: 2 },
            ..RunConfig::default()
        };
        assert!(bad_split.validate().is_err());
    }

    #[test]
    fn manifests_load_as_configs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { training_seed: 7, ..RunConfig::default() };
        let path = dir.path().join("manifest.json");
        fs::write(&path, serde_json::to_vec(&Manifest::new("search", false, &cfg)).unwrap()).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }
}
