//! End-to-end scorer: fusion, manifold lift, the two graph branches and the
//! classifier head.
//!
//! [`HyperVDModel::forward`] is the reference evaluation built from the
//! per-point operations in [`crate::lorentz`], [`crate::hyper_nn`] and
//! [`crate::graphs`]. [`tape`] re-expresses the same computation on the
//! autodiff tape for training; the two are tested against each other.

pub mod checkpoint;
pub mod tape;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, FeatureSequence, FusionDims, FusionParams, FusionStrategy};
use crate::graphs::{cosine_adjacency, hfsg_adjacency, htrg_adjacency, row_normalized, AdjacencyMatrix};
use crate::hyper_nn::{classifier_forward, hl_forward, hyper_agg, Classifier, HyperbolicLinear};
use crate::lorentz::{lift_to_manifold, Curvature, LorentzPoint};
use crate::params::{count_parameters, Linear, ParamStore};
use crate::tensor::{dot, leaky_relu, sigmoid, Matrix};
use crate::{dropout_mask, Mode, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Hyperbolic,
    Euclidean,
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Geometry::Hyperbolic),
            "euclidean" => Ok(Geometry::Euclidean),
            other => Err(Error::Config(format!("unknown geometry `{other}`"))),
        }
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Geometry::Hyperbolic => "hyperbolic",
            Geometry::Euclidean => "euclidean",
        })
    }
}

/// Architecture and hyper-parameters. [`Default`] is the full-scale setup
/// (1024-d visual, 128-d audio, 512-wide fusion hidden layer, two graph
/// layers of width 32 per branch, `K = -1`, `gamma = 1`, `eps = 2`,
/// dropout 0.6).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub fusion_hidden: usize,
    pub hidden: usize,
    pub layers: usize,
    pub curvature: Curvature,
    pub tau: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub dropout: f64,
    /// Dropout on the input of each hyperbolic linear layer.
    pub hl_dropout: f64,
    pub leaky_slope: f64,
    pub fusion: FusionStrategy,
    pub geometry: Geometry,
    pub hfsg: bool,
    pub htrg: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 1024,
            audio_dim: 128,
            fusion_hidden: 512,
            hidden: 32,
            layers: 2,
            curvature: Curvature::default(),
            tau: 0.7,
            gamma: 1.0,
            epsilon: 2.0,
            dropout: 0.6,
            hl_dropout: 0.0,
            leaky_slope: 0.01,
            fusion: FusionStrategy::Detour,
            geometry: Geometry::Hyperbolic,
            hfsg: true,
            htrg: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient verification: D=8, d=4,
    /// hidden 3, both branches, no dropout.
    pub fn toy() -> Self {
        Self {
            visual_dim: 8,
            audio_dim: 4,
            fusion_hidden: 6,
            hidden: 3,
            dropout: 0.0,
            hl_dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn fusion_dims(&self) -> FusionDims {
        FusionDims {
            visual: self.visual_dim,
            audio: self.audio_dim,
            hidden: self.fusion_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.visual_dim == 0 || self.audio_dim == 0 || self.fusion_hidden == 0 || self.hidden == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.layers == 0 {
            return bad("at least one graph layer is required".into());
        }
        if !self.hfsg && !self.htrg {
            return bad("at least one branch must be enabled".into());
        }
        crate::graphs::GraphConfig {
            tau: self.tau,
            gamma: self.gamma,
        }
        .validate()?;
        for (name, p) in [("dropout", self.dropout), ("hl_dropout", self.hl_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if !self.epsilon.is_finite() || !self.leaky_slope.is_finite() {
            return bad("epsilon and leaky_slope must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    Similarity,
    Temporal,
}

impl BranchKind {
    pub fn prefix(self) -> &'static str {
        match self {
            BranchKind::Similarity => "hfsg",
            BranchKind::Temporal => "htrg",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BranchLayers {
    Hyperbolic(Vec<HyperbolicLinear>),
    Euclidean(Vec<Linear>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub kind: BranchKind,
    pub layers: BranchLayers,
}

impl Branch {
    /// Width of one snippet's output (ambient length for hyperbolic layers).
    pub fn out_width(&self) -> usize {
        match &self.layers {
            BranchLayers::Hyperbolic(l) => l.last().map_or(0, |l| l.out_dim + 1),
            BranchLayers::Euclidean(l) => l.last().map_or(0, |l| l.out_dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Hyperbolic(Classifier),
    Euclidean(Linear),
}

/// Per-snippet violence scores in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Intermediate hyperbolic embeddings recorded by [`HyperVDModel::forward_trace`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub lifted: Vec<LorentzPoint>,
    /// `layers[b][l]` holds branch `b`'s embeddings after layer `l`; the
    /// final entry is the branch output after activation.
    pub layers: Vec<Vec<Vec<LorentzPoint>>>,
    pub scores: ScoreVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperVDModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub fusion: FusionParams,
    pub branches: Vec<Branch>,
    pub head: Head,
}

impl HyperVDModel {
    /// Builds and initializes a model; parameters are a pure function of
    /// `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let fusion = FusionParams::init(
            config.fusion,
            config.fusion_dims(),
            config.dropout,
            config.leaky_slope,
            &mut store,
            &mut rng,
        )?;
        let fused = config.fusion_dims().out_dim();
        let mut branches = Vec::new();
        for (enabled, kind) in [
            (config.hfsg, BranchKind::Similarity),
            (config.htrg, BranchKind::Temporal),
        ] {
            if !enabled {
                continue;
            }
            let prefix = kind.prefix();
            let layers = match config.geometry {
                Geometry::Hyperbolic => {
                    let mut in_dim = fused + 1;
                    let mut layers = Vec::with_capacity(config.layers);
                    for l in 0..config.layers {
                        let layer = HyperbolicLinear::init(
                            &mut store,
                            &format!("{prefix}.{l}"),
                            in_dim,
                            config.hidden,
                            config.hl_dropout,
                            config.leaky_slope,
                            &mut rng,
                        );
                        in_dim = config.hidden + 1;
                        layers.push(layer);
                    }
                    BranchLayers::Hyperbolic(layers)
                }
                Geometry::Euclidean => {
                    let mut in_dim = fused;
                    let mut layers = Vec::with_capacity(config.layers);
                    for l in 0..config.layers {
                        layers.push(Linear::init(
                            &mut store,
                            &format!("{prefix}.{l}"),
                            in_dim,
                            config.hidden,
                            &mut rng,
                        ));
                        in_dim = config.hidden;
                    }
                    BranchLayers::Euclidean(layers)
                }
            };
            branches.push(Branch { kind, layers });
        }
        let head_in: usize = branches.iter().map(Branch::out_width).sum();
        let head = match config.geometry {
            Geometry::Hyperbolic => Head::Hyperbolic(Classifier::init(
                &mut store,
                "classifier",
                head_in,
                config.epsilon,
                &mut rng,
            )),
            Geometry::Euclidean => Head::Euclidean(Linear::init(&mut store, "classifier", head_in, 1, &mut rng)),
        };
        Ok(Self {
            config,
            store,
            fusion,
            branches,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        count_parameters(&self.store)
    }

    pub fn curvature(&self) -> Curvature {
        self.config.curvature
    }

    /// Scores every snippet of one video.
    pub fn forward(&self, xv: &FeatureSequence, xa: &FeatureSequence, mode: &mut Mode<'_>) -> Result<ScoreVector> {
        match self.config.geometry {
            Geometry::Hyperbolic => Ok(self.forward_trace(xv, xa, mode)?.scores),
            Geometry::Euclidean => self.euclidean_gcn_forward(xv, xa, mode),
        }
    }

    /// Hyperbolic forward pass that also returns every intermediate embedding.
    pub fn forward_trace(
        &self,
        xv: &FeatureSequence,
        xa: &FeatureSequence,
        mode: &mut Mode<'_>,
    ) -> Result<ForwardTrace> {
        if self.config.geometry != Geometry::Hyperbolic {
            return Err(Error::Config("forward_trace needs the hyperbolic geometry".into()));
        }
        let k = self.curvature();
        let fused = fuse(&self.fusion, &self.store, xv, xa, mode)?;
        let lifted: Vec<LorentzPoint> = fused.data().row_iter().map(|r| lift_to_manifold(r, k)).collect();
        let t = lifted.len();

        let mut layers = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let BranchLayers::Hyperbolic(hl_layers) = &branch.layers else {
                unreachable!("hyperbolic model with euclidean branch")
            };
            let temporal = match branch.kind {
                BranchKind::Temporal => Some(htrg_adjacency(t, self.config.gamma)?),
                BranchKind::Similarity => None,
            };
            let mut trace = Vec::with_capacity(hl_layers.len() + 1);
            let mut x = lifted.clone();
            for layer in hl_layers {
                let adj = match &temporal {
                    Some(a) => a.clone(),
                    None => hfsg_adjacency(&x, self.config.tau)?,
                };
                let params = layer.view(&self.store);
                let ys = x
                    .iter()
                    .map(|p| hl_forward(&params, p, mode))
                    .collect::<Result<Vec<_>>>()?;
                x = aggregate_rows(&adj, &ys)?;
                trace.push(x.clone());
            }
            let out = branch_output(&x, self.config.leaky_slope, self.config.dropout, mode);
            trace.push(out);
            layers.push(trace);
        }

        let Head::Hyperbolic(classifier) = &self.head else {
            unreachable!("hyperbolic model with euclidean head")
        };
        let view = classifier.view(&self.store);
        let mut scores = Vec::with_capacity(t);
        for i in 0..t {
            let concat: Vec<f64> = layers
                .iter()
                .flat_map(|b| b.last().expect("branch output")[i].coords().iter().copied())
                .collect();
            scores.push(classifier_forward(&view, &concat)?);
        }
        Ok(ForwardTrace {
            lifted,
            layers,
            scores: ScoreVector(scores),
        })
    }

    /// Euclidean GCN baseline: no lift, linear layers, row-stochastic
    /// aggregation, cosine-similarity graph and a logistic head.
    pub fn euclidean_gcn_forward(
        &self,
        xv: &FeatureSequence,
        xa: &FeatureSequence,
        mode: &mut Mode<'_>,
    ) -> Result<ScoreVector> {
        if self.config.geometry != Geometry::Euclidean {
            return Err(Error::Config("euclidean_gcn_forward needs the euclidean geometry".into()));
        }
        let slope = self.config.leaky_slope;
        let fused = fuse(&self.fusion, &self.store, xv, xa, mode)?;
        let t = fused.len();
        let mut outputs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let BranchLayers::Euclidean(lin_layers) = &branch.layers else {
                unreachable!("euclidean model with hyperbolic branch")
            };
            let temporal = match branch.kind {
                BranchKind::Temporal => Some(row_normalized(&htrg_adjacency(t, self.config.gamma)?.weights)),
                BranchKind::Similarity => None,
            };
            let mut h = fused.data().clone();
            for layer in lin_layers {
                let adj = match &temporal {
                    Some(a) => a.clone(),
                    None => cosine_adjacency(&h, self.config.tau)?.weights,
                };
                let mut x = layer.apply(&self.store, &h)?;
                if let Mode::Train(rng) = mode {
                    if self.config.hl_dropout > 0.0 {
                        let mask = dropout_mask(rng, x.len(), self.config.hl_dropout);
                        x.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    }
                }
                h = adj.matmul(&x)?;
                h.map_inplace(|v| leaky_relu(v, slope));
            }
            h.map_inplace(|v| leaky_relu(v, slope));
            if let Mode::Train(rng) = mode {
                if self.config.dropout > 0.0 {
                    let mask = dropout_mask(rng, h.len(), self.config.dropout);
                    h.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                }
            }
            outputs.push(h);
        }
        let Head::Euclidean(head) = &self.head else {
            unreachable!("euclidean model with hyperbolic head")
        };
        let w = self.store.get(head.weight).as_slice();
        let b = self.store.get(head.bias).as_slice()[0];
        let mut scores = Vec::with_capacity(t);
        for i in 0..t {
            let concat: Vec<f64> = outputs.iter().flat_map(|h| h.row(i).iter().copied()).collect();
            scores.push(sigmoid(dot(w, &concat) + b));
        }
        Ok(ScoreVector(scores))
    }
}

fn aggregate_rows(adj: &AdjacencyMatrix, ys: &[LorentzPoint]) -> Result<Vec<LorentzPoint>> {
    (0..ys.len()).map(|i| hyper_agg(adj.row(i), ys)).collect()
}

/// LeakyReLU and dropout on the spatial coordinates, then the time
/// coordinate is recomputed so the points stay on the hyperboloid.
pub fn branch_output(points: &[LorentzPoint], slope: f64, dropout: f64, mode: &mut Mode<'_>) -> Vec<LorentzPoint> {
    points
        .iter()
        .map(|p| {
            let mut s: Vec<f64> = p.spatial().iter().map(|&v| leaky_relu(v, slope)).collect();
            if let Mode::Train(rng) = mode {
                if dropout > 0.0 {
                    let mask = dropout_mask(rng, s.len(), dropout);
                    s.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                }
            }
            LorentzPoint::from_spatial(&s, p.curvature())
        })
        .collect()
}

/// Convenience for tests and tools: stacks row vectors into a feature sequence.
pub fn sequence(rows: &[Vec<f64>], modality: crate::fusion::Modality) -> Result<FeatureSequence> {
    FeatureSequence::new(Matrix::from_rows(rows)?, modality)
}
