//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! visual_dim = 16
//! audio_dim = 8
//! fusion = "detour"
//!
//! [train]
//! epochs = 50
//! batch_size = 8
//!
//! [data]
//! train_manifest = "train.csv"
//! test_manifest = "test.csv"
//!
//! [output]
//! dir = "run"
//! ```
//!
//! Every section is optional and missing keys take their defaults. Relative
//! paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use hypervd::training::TrainConfig;
use hypervd::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context};

/// Overrides the configured seed when set.
pub const SEED_ENV: &str = "HYPERVD_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self { dir: "run".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses and validates; does not consult the environment.
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config("config", e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.model.validate().ctx("config")?;
        cfg.train.validate().ctx("config")?;
        Ok(cfg)
    }

    /// Reads a config file and applies the `HYPERVD_SEED` override.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::from_toml(&text, base)?;
        if let Some(seed) = seed_override()? {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn manifest(&self, which: Split) -> Result<PathBuf, CliError> {
        let p = match which {
            Split::Train => &self.data.train_manifest,
            Split::Test => &self.data.test_manifest,
        };
        p.as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::config("config", format!("[data] {} is not set", which.key())))
    }

    /// Desk-scale profile: narrow layers, small batches and a higher
    /// learning rate so a few dozen short videos train in seconds.
    pub fn desk(visual_dim: usize, audio_dim: usize, seed: u64) -> Self {
        Self {
            seed,
            model: ModelConfig {
                visual_dim,
                audio_dim,
                fusion_hidden: 32,
                hidden: 32,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 8,
                lr0: 5e-3,
                ..TrainConfig::default()
            },
            data: DataPaths {
                train_manifest: Some("train.csv".into()),
                test_manifest: Some("test.csv".into()),
            },
            output: OutputPaths::default(),
            base_dir: PathBuf::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn key(self) -> &'static str {
        match self {
            Split::Train => "train_manifest",
            Split::Test => "test_manifest",
        }
    }
}

pub fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config("config", format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypervd::{FusionStrategy, Geometry};

    #[test]
    fn empty_config_has_defaults() {
        let cfg = RunConfig::from_toml("", "/x").unwrap();
        let m = &cfg.model;
        assert_eq!(m.curvature.value(), -1.0);
        assert_eq!((m.gamma, m.epsilon, m.dropout, m.hidden), (1.0, 2.0, 0.6, 32));
        assert_eq!(m.fusion, FusionStrategy::Detour);
        assert_eq!(m.geometry, Geometry::Hyperbolic);
        let t = &cfg.train;
        assert_eq!((t.epochs, t.batch_size, t.q, t.lr0), (50, 128, 16, 5e-4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 1", "/").is_err());
        assert!(RunConfig::from_toml("[model]\nhiden = 3", "/").is_err());
        assert!(RunConfig::from_toml("[train]\nseed = 3", "/").is_err());
        let err = RunConfig::from_toml("[model]\ntau = 1.5", "/").unwrap_err();
        assert_eq!(err.code, crate::error::EXIT_CONFIG);
        assert!(RunConfig::from_toml("[model]\ncurvature = 0.5", "/").is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let mut cfg = RunConfig::desk(16, 8, 7);
        cfg.model.fusion = FusionStrategy::BilinearConcat;
        cfg.model.geometry = Geometry::Euclidean;
        let back = RunConfig::from_toml(&cfg.to_toml(), "").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn integer_curvature_is_accepted() {
        let cfg = RunConfig::from_toml("[model]\ncurvature = -2", "/").unwrap();
        assert_eq!(cfg.model.curvature.value(), -2.0);
    }
}
