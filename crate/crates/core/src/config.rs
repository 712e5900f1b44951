//! Run configuration for a full pipeline, stored as one JSON document.
//!
//! Every section rejects unknown keys. Missing keys take their defaults, so
//! `{}` is a valid configuration. The master `seed` overrides the per-section
//! seeds when a run is resolved.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crl::TrainConfig;
use crate::error::{Error, Result};
use crate::features::feature_map;
use crate::navenv::NavConfig;
use crate::octree::TreeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub trajectories: usize,
    /// Lateral noise scale of the generated demonstrations.
    pub sigma: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            trajectories: 40,
            sigma: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Expert trajectories (JSONL). When absent, demonstrations are generated.
    pub trajectories: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub feature_map: String,
    pub prune_threshold: f64,
    pub eval_episodes: usize,
    pub expert: ExpertConfig,
    pub tree: TreeConfig,
    pub train: TrainConfig,
    pub nav: NavConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            feature_map: "identity_xy".into(),
            prune_threshold: 0.001,
            eval_episodes: 100,
            expert: ExpertConfig::default(),
            tree: TreeConfig::default(),
            train: TrainConfig {
                budget: 0.1,
                policy_lr: 0.1,
                multiplier_lr: 0.002,
                episodes_per_epoch: 64,
                epochs: 14_000,
                ..TrainConfig::default()
            },
            nav: NavConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::Config(e.to_string()),
            _ => Error::parse(e.line(), e.column(), e.to_string()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        self.train.validate()?;
        self.nav.validate()?;
        feature_map(&self.feature_map)?;
        if self.train.feature_map != self.feature_map {
            return Err(Error::Config(format!(
                "train.feature_map {:?} differs from feature_map {:?}",
                self.train.feature_map, self.feature_map
            )));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(Error::Config("prune_threshold must be non-negative".into()));
        }
        if self.eval_episodes == 0 || self.expert.trajectories == 0 {
            return Err(Error::Config("eval_episodes and expert.trajectories must be positive".into()));
        }
        if !(self.expert.sigma >= 0.0 && self.expert.sigma.is_finite()) {
            return Err(Error::Config("expert.sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Copy with `seed` pushed into every seeded section.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.train.seed = self.seed;
        out
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }.resolved()
    }

    /// Seed for the generated demonstrations.
    pub fn expert_seed(&self) -> u64 {
        self.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default().with_seed(7);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.train.seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"tree": {"depth": 3}}"#).unwrap_err();
        assert_eq!(err.kind(), "config");
        let err = RunConfig::from_json(r#"{"colour": 1}"#).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn syntax_errors_are_parse_errors() {
        let err = RunConfig::from_json("{\n  \"seed\": ,\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"budget": -1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"eval_episodes": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"tree": {"kernel": "box"}}"#).is_err());
    }
}
