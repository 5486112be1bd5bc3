//! The TOML run configuration shared by the subcommands.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use wsaug::augment::AugmentPipeline;
use wsaug::mixup::MixupConfig;
use wsaug::nnrun::TrainConfig;
use wsaug::probe::{ProbeAugment, ProbeConfig};
use wsaug::signals::ShapeKind;
use wsaug::store::GenerationParams;
use wsaug::MlpSpec;

use crate::UsageError;

/// Every section is optional; absent sections take their defaults. Unknown
/// keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_spec")]
    pub spec: MlpSpec,
    #[serde(default)]
    pub fit: TrainConfig,
    #[serde(default)]
    pub generation: Generation,
    #[serde(default)]
    pub augment: AugmentPipeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixup: Option<MixupConfig>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub experiment: Experiment,
}

fn default_spec() -> MlpSpec {
    MlpSpec::siren(&[2, 16, 16, 1]).expect("valid default")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: default_spec(),
            fit: TrainConfig::default(),
            generation: Generation::default(),
            augment: AugmentPipeline::default(),
            mixup: None,
            probe: ProbeConfig::default(),
            experiment: Experiment::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Generation {
    pub objects: usize,
    pub views: usize,
    pub resolution: usize,
    pub seed: u64,
    pub kinds: Vec<ShapeKind>,
}

impl Default for Generation {
    fn default() -> Self {
        Self { objects: 20, views: 1, resolution: 28, seed: 0, kinds: ShapeKind::ALL.to_vec() }
    }
}

/// Grid for `experiment views`: training sets use the first `n` objects of
/// `objects` and `1..=max_views` views of each, scored on a separate test
/// set of `test_objects` single-view objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub objects: Vec<usize>,
    pub max_views: usize,
    pub test_objects: usize,
    pub test_seed: u64,
    pub seeds: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Self { objects: vec![10, 25, 50], max_views: 4, test_objects: 100, test_seed: 1, seeds: 5 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| UsageError(format!("config {}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let bad = |key: &str, e: wsaug::Error| UsageError(format!("invalid `{key}`: {e}"));
        self.fit.validate().map_err(|e| bad("fit", e))?;
        self.augment.validate(&self.spec).map_err(|e| bad("augment", e))?;
        if let Some(m) = &self.mixup {
            m.validate().map_err(|e| bad("mixup", e))?;
        }
        self.probe.validate().map_err(|e| bad("probe", e))?;
        self.generation_params().validate().map_err(|e| bad("generation", e))?;
        if self.experiment.objects.is_empty() || self.experiment.max_views == 0 || self.experiment.test_objects == 0 {
            return Err(UsageError(
                "invalid `experiment`: objects, max_views and test_objects must be non-empty/positive".to_string(),
            )
            .into());
        }
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        let g = &self.generation;
        GenerationParams {
            num_objects: g.objects,
            views_per_object: g.views,
            kinds: g.kinds.clone(),
            resolution: g.resolution,
            root_seed: g.seed,
            fit: self.fit.clone(),
        }
    }

    pub fn probe_augment(&self) -> ProbeAugment {
        ProbeAugment { pipeline: self.augment.clone(), mixup: self.mixup.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Reads an augmentation pipeline, either bare (`seed`, `[[steps]]`) or as
/// the `[augment]` section of a run config.
pub fn load_pipeline(path: &Path) -> anyhow::Result<AugmentPipeline> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading pipeline {}", path.display()))?;
    match toml::from_str::<AugmentPipeline>(&text) {
        Ok(p) => Ok(p),
        Err(bare) => match toml::from_str::<RunConfig>(&text) {
            Ok(cfg) => Ok(cfg.augment),
            Err(_) => Err(UsageError(format!("pipeline {}: {}", path.display(), bare.message())).into()),
        },
    }
}
