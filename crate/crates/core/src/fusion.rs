//! Audio-visual feature fusion.
//!
//! Detour fusion projects only the visual stream, `X = f_v(X^V) ⊕ X^A`; the
//! other four strategies are the comparison baselines. Every strategy is a
//! per-snippet map producing `2 * audio_dim` columns.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Linear, ParamStore};
use crate::tensor::{leaky_relu, sigmoid, Matrix};
use crate::{dropout_mask, Mode, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Detour,
    Concat,
    Additive,
    Gated,
    BilinearConcat,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 5] = [
        FusionStrategy::Concat,
        FusionStrategy::Additive,
        FusionStrategy::Gated,
        FusionStrategy::BilinearConcat,
        FusionStrategy::Detour,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Detour => "detour",
            FusionStrategy::Concat => "concat",
            FusionStrategy::Additive => "additive",
            FusionStrategy::Gated => "gated",
            FusionStrategy::BilinearConcat => "bilinear_concat",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Audio,
    Fused,
}

/// Per-video `T x dim` matrix of snippet features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Matrix,
    modality: Modality,
}

impl FeatureSequence {
    pub fn new(data: Matrix, modality: Modality) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::Data("feature sequence has no snippets".into()));
        }
        if !data.all_finite() {
            return Err(Error::Data("feature sequence has non-finite entries".into()));
        }
        Ok(Self { data, modality })
    }

    #[inline]
    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    #[inline]
    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Snippet count `T`.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub visual: usize,
    pub audio: usize,
    /// Width of the hidden projection layer (512 at full scale).
    pub hidden: usize,
}

impl FusionDims {
    pub fn out_dim(&self) -> usize {
        2 * self.audio
    }
}

/// Fusion layers. `layers` holds the strategy's linear maps in a fixed order:
///
/// | strategy          | layers                                  |
/// |-------------------|-----------------------------------------|
/// | `detour`          | `v1: D->h`, `v2: h->d`                  |
/// | `concat`          | `f1: D+d->h`, `f2: h->2d`               |
/// | `additive`        | `v1: D->h`, `v2: h->2d`, `a: d->2d`     |
/// | `gated`           | `u: d->2d`, `v: D->2d`, `w: 2d->2d`     |
/// | `bilinear_concat` | `u: d->d`, `v: D->d`                    |
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub strategy: FusionStrategy,
    pub dims: FusionDims,
    pub layers: Vec<Linear>,
    pub dropout: f64,
    pub slope: f64,
}

impl FusionParams {
    pub fn init(
        strategy: FusionStrategy,
        dims: FusionDims,
        dropout: f64,
        slope: f64,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.visual == 0 || dims.audio == 0 || dims.hidden == 0 {
            return Err(Error::Config("fusion dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let FusionDims { visual, audio, hidden } = dims;
        let mut lin = |name: &str, i, o| Linear::init(store, &format!("fusion.{name}"), i, o, rng);
        let layers = match strategy {
            FusionStrategy::Detour => vec![lin("v1", visual, hidden), lin("v2", hidden, audio)],
            FusionStrategy::Concat => vec![
                lin("f1", visual + audio, hidden),
                lin("f2", hidden, 2 * audio),
            ],
            FusionStrategy::Additive => vec![
                lin("v1", visual, hidden),
                lin("v2", hidden, 2 * audio),
                lin("a", audio, 2 * audio),
            ],
            FusionStrategy::Gated => vec![
                lin("u", audio, 2 * audio),
                lin("v", visual, 2 * audio),
                lin("w", 2 * audio, 2 * audio),
            ],
            FusionStrategy::BilinearConcat => vec![lin("u", audio, audio), lin("v", visual, audio)],
        };
        Ok(Self {
            strategy,
            dims,
            layers,
            dropout,
            slope,
        })
    }
}

fn activate(x: &mut Matrix, slope: f64, dropout: f64, mode: &mut Mode<'_>) {
    x.map_inplace(|v| leaky_relu(v, slope));
    apply_dropout(x, dropout, mode);
}

fn apply_dropout(x: &mut Matrix, dropout: f64, mode: &mut Mode<'_>) {
    if let Mode::Train(rng) = mode {
        if dropout > 0.0 {
            let mask = dropout_mask(rng, x.len(), dropout);
            x.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        }
    }
}

/// Checks that both modalities cover the same snippets with the expected widths.
pub fn check_inputs(dims: &FusionDims, xv: &FeatureSequence, xa: &FeatureSequence) -> Result<()> {
    if xv.len() != xa.len() {
        return Err(Error::Alignment {
            visual: xv.len(),
            audio: xa.len(),
        });
    }
    if xv.dim() != dims.visual || xa.dim() != dims.audio {
        return Err(Error::Dimension(format!(
            "fusion expects visual/audio widths {}/{}, got {}/{}",
            dims.visual,
            dims.audio,
            xv.dim(),
            xa.dim()
        )));
    }
    Ok(())
}

/// Fuses visual and audio snippet features into a `T x 2d` sequence.
pub fn fuse(
    params: &FusionParams,
    store: &ParamStore,
    xv: &FeatureSequence,
    xa: &FeatureSequence,
    mode: &mut Mode<'_>,
) -> Result<FeatureSequence> {
    check_inputs(&params.dims, xv, xa)?;
    let (v, a) = (xv.data(), xa.data());
    let (p, slope) = (params.dropout, params.slope);
    let l = &params.layers;
    let mlp2 = |first: &Linear, second: &Linear, x: &Matrix, mode: &mut Mode<'_>| -> Result<Matrix> {
        let mut h = first.apply(store, x)?;
        activate(&mut h, slope, p, mode);
        let mut out = second.apply(store, &h)?;
        activate(&mut out, slope, p, mode);
        Ok(out)
    };
    let fused = match params.strategy {
        FusionStrategy::Detour => mlp2(&l[0], &l[1], v, mode)?.hconcat(a)?,
        FusionStrategy::Concat => mlp2(&l[0], &l[1], &v.hconcat(a)?, mode)?,
        FusionStrategy::Additive => {
            let mut out = mlp2(&l[0], &l[1], v, mode)?;
            let mut fa = l[2].apply(store, a)?;
            activate(&mut fa, slope, p, mode);
            out.axpy(1.0, &fa);
            out
        }
        FusionStrategy::Gated => {
            let ua = l[0].apply(store, a)?;
            let gate = l[1].apply(store, v)?.map(sigmoid);
            let mut prod = ua;
            prod.as_mut_slice()
                .iter_mut()
                .zip(gate.as_slice())
                .for_each(|(x, g)| *x *= g);
            let mut out = l[2].apply(store, &prod)?;
            apply_dropout(&mut out, p, mode);
            out
        }
        FusionStrategy::BilinearConcat => {
            let mut ua = l[0].apply(store, a)?;
            apply_dropout(&mut ua, p, mode);
            let mut vv = l[1].apply(store, v)?;
            apply_dropout(&mut vv, p, mode);
            ua.hconcat(&vv)?
        }
    };
    FeatureSequence::new(fused, Modality::Fused)
}
