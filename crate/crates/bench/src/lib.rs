//! Shared fixtures for the criterion benchmarks.

use hypervd::data_io::{generate_synthetic, SynthConfig};
use hypervd::training::VideoBag;
use hypervd::{HyperVDModel, ModelConfig};

/// Desk-width model over 16/8-dimensional features.
pub fn desk_config() -> ModelConfig {
    ModelConfig {
        visual_dim: 16,
        audio_dim: 8,
        fusion_hidden: 32,
        hidden: 32,
        ..ModelConfig::default()
    }
}

pub fn model(cfg: ModelConfig) -> HyperVDModel {
    HyperVDModel::new(cfg, 1).expect("valid config")
}

/// `n` training videos of exactly `t` snippets each.
pub fn videos(n: usize, t: usize) -> Vec<VideoBag> {
    generate_synthetic(&SynthConfig {
        seed: 3,
        n_train: n,
        n_test: 0,
        t_min: t,
        t_max: t,
        ..SynthConfig::default()
    })
    .expect("synthetic data")
    .train
}
