//! HyperVD: weakly supervised audio-visual violence detection with fully
//! hyperbolic graph networks on the Lorentz model.
//!
//! Pipeline per video: detour fusion of snippet features, lift onto the
//! hyperboloid, two hyperbolic graph branches (feature similarity and
//! temporal relation), a Lorentzian classifier head producing one score per
//! snippet, and top-k multiple-instance pooling against the video label.

pub mod autodiff;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graphs;
pub mod hyper_nn;
pub mod lorentz;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;

use rand::Rng as _;

pub use error::{Error, Result};
pub use fusion::{FeatureSequence, FusionStrategy, Modality};
pub use lorentz::{Curvature, LorentzPoint, TangentVector};
pub use model::{Geometry, HyperVDModel, ModelConfig, ScoreVector};

pub use params::{count_parameters, ParamStore};
pub use tensor::Matrix;


/// Random generator used everywhere a seed must reproduce results exactly.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Forward-pass mode. Dropout draws from the generator in train mode and is
/// disabled in eval mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted-dropout multipliers: `0` with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(rng: &mut Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
