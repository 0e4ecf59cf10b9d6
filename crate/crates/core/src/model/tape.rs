//! The model's forward pass recorded on an autodiff [`Tape`].

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{check_inputs, FeatureSequence, FusionParams, FusionStrategy};
use crate::graphs::{htrg_adjacency, row_normalized, COSINE_EPS};
use crate::hyper_nn::HyperbolicLinear;
use crate::lorentz::Curvature;
use crate::params::{Linear, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::{dropout_mask, Mode};

use super::{BranchKind, BranchLayers, Geometry, Head, HyperVDModel};

/// One tape leaf per stored parameter, indexed like the store.
#[derive(Clone, Debug)]
pub struct TapeParams {
    vars: Vec<Var>,
}

impl TapeParams {
    pub fn register(tape: &mut Tape, store: &ParamStore) -> Self {
        Self {
            vars: store.iter().map(|(_, p)| tape.leaf(p.value.clone())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn linear(tape: &mut Tape, p: &TapeParams, layer: &Linear, x: Var) -> Var {
    let y = tape.matmul_bt(x, p.get(layer.weight));
    tape.add(y, p.get(layer.bias))
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode<'_>) -> Var {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let (r, c) = tape.value(x).shape();
            let mask = Matrix::from_vec(r, c, dropout_mask(rng, r * c, rate)).expect("mask shape");
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

fn activate(tape: &mut Tape, x: Var, slope: f64, rate: f64, mode: &mut Mode<'_>) -> Var {
    let h = tape.leaky_relu(x, slope);
    dropout(tape, h, rate, mode)
}

/// Differentiable counterpart of [`crate::fusion::fuse`]; returns `T x 2d`.
pub fn fuse_tape(
    tape: &mut Tape,
    p: &TapeParams,
    fusion: &FusionParams,
    xv: &FeatureSequence,
    xa: &FeatureSequence,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    check_inputs(&fusion.dims, xv, xa)?;
    let v = tape.leaf(xv.data().clone());
    let a = tape.leaf(xa.data().clone());
    let (rate, slope) = (fusion.dropout, fusion.slope);
    let l = &fusion.layers;
    let mlp2 = |tape: &mut Tape, x: Var, mode: &mut Mode<'_>| {
        let h = linear(tape, p, &l[0], x);
        let h = activate(tape, h, slope, rate, mode);
        let o = linear(tape, p, &l[1], h);
        activate(tape, o, slope, rate, mode)
    };
    Ok(match fusion.strategy {
        FusionStrategy::Detour => {
            let fv = mlp2(tape, v, mode);
            tape.concat_cols(fv, a)
        }
        FusionStrategy::Concat => {
            let x = tape.concat_cols(v, a);
            mlp2(tape, x, mode)
        }
        FusionStrategy::Additive => {
            let fv = mlp2(tape, v, mode);
            let fa = linear(tape, p, &l[2], a);
            let fa = activate(tape, fa, slope, rate, mode);
            tape.add(fv, fa)
        }
        FusionStrategy::Gated => {
            let ua = linear(tape, p, &l[0], a);
            let gv = linear(tape, p, &l[1], v);
            let gate = tape.sigmoid(gv);
            let prod = tape.mul(ua, gate);
            let out = linear(tape, p, &l[2], prod);
            dropout(tape, out, rate, mode)
        }
        FusionStrategy::BilinearConcat => {
            let ua = linear(tape, p, &l[0], a);
            let ua = dropout(tape, ua, rate, mode);
            let vv = linear(tape, p, &l[1], v);
            let vv = dropout(tape, vv, rate, mode);
            tape.concat_cols(ua, vv)
        }
    })
}

/// Hyperbolic linear layer applied to every row of a `T x (n+1)` matrix of points.
fn hl_tape(
    tape: &mut Tape,
    p: &TapeParams,
    store: &ParamStore,
    layer: &HyperbolicLinear,
    x: Var,
    k: Curvature,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let (t, n1) = tape.value(x).shape();
    if n1 != layer.in_dim {
        return Err(Error::Dimension(format!(
            "hyperbolic linear expects {} input coordinates, got {n1}",
            layer.in_dim
        )));
    }
    let xd = match mode {
        Mode::Train(rng) if layer.dropout_rate > 0.0 => {
            let mut mask = Matrix::filled(t, n1, 1.0);
            for i in 0..t {
                let m = dropout_mask(rng, n1 - 1, layer.dropout_rate);
                mask.row_mut(i)[1..].copy_from_slice(&m);
            }
            tape.mul_const(x, mask)
        }
        _ => x,
    };
    let time = tape.slice_cols(xd, 0, 1);
    let spatial = tape.slice_cols(xd, 1, n1);
    let spatial = tape.leaky_relu(spatial, layer.slope);
    let h = tape.concat_cols(time, spatial);
    let u = linear(
        tape,
        p,
        &Linear {
            weight: layer.weight,
            bias: layer.bias,
            in_dim: layer.in_dim,
            out_dim: layer.out_dim,
        },
        h,
    );
    let norm2 = tape.row_sum_sq(u);
    if tape.value(norm2).as_slice().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateDirection);
    }
    let norm = tape.sqrt(norm2);
    let inv = tape.recip(norm);
    let gv = tape.matmul_bt(x, p.get(layer.velocity));
    let gv = tape.add(gv, p.get(layer.gate_bias));
    let gate = tape.sigmoid(gv);
    let f = tape.mul(gate, inv);
    let f = tape.mul(f, p.get(layer.scale));
    let phi = tape.mul(u, f);
    debug_assert_eq!(store.get(layer.weight).rows(), layer.out_dim);
    Ok(tape.lorentz_time(phi, k))
}

fn aggregate(tape: &mut Tape, adj: Var, y: Var, k: Curvature) -> Result<Var> {
    let m = tape.matmul(adj, y);
    for r in tape.value(m).row_iter() {
        let q = -r[0] * r[0] + r[1..].iter().map(|v| v * v).sum::<f64>();
        if !(q < 0.0) || !(r[0] > 0.0) {
            return Err(Error::DegenerateAggregation(q));
        }
    }
    Ok(tape.lorentz_normalize(m, k))
}

fn similarity_graph(tape: &mut Tape, x: Var, k: Curvature, tau: f64) -> Var {
    let d = tape.lorentz_distance(x, k);
    let neg = tape.scale(d, -1.0);
    let g = tape.exp(neg);
    let keep = tape.value(g).as_slice().iter().map(|&v| v > tau).collect();
    tape.masked_softmax(g, keep)
}

fn cosine_graph(tape: &mut Tape, h: Var, tau: f64) -> Var {
    let n2 = tape.row_sum_sq(h);
    let n2 = tape.add_scalar(n2, COSINE_EPS);
    let n = tape.sqrt(n2);
    let inv = tape.recip(n);
    let hn = tape.mul(h, inv);
    let s = tape.matmul_bt(hn, hn);
    let t = tape.value(s).rows();
    let keep = tape
        .value(s)
        .as_slice()
        .iter()
        .enumerate()
        .map(|(idx, &v)| idx / t == idx % t || v > tau)
        .collect();
    tape.masked_softmax(s, keep)
}

/// Records the model's forward pass and returns the `T x 1` score column.
/// Given the same mode and generator state it reproduces
/// [`HyperVDModel::forward`].
pub fn forward_tape(
    model: &HyperVDModel,
    tape: &mut Tape,
    p: &TapeParams,
    xv: &FeatureSequence,
    xa: &FeatureSequence,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let cfg = &model.config;
    let k = cfg.curvature;
    let fused = fuse_tape(tape, p, &model.fusion, xv, xa, mode)?;
    let t = xv.len();
    let mut outputs = Vec::with_capacity(model.branches.len());
    match cfg.geometry {
        Geometry::Hyperbolic => {
            let lifted = tape.lorentz_lift(fused, k);
            for branch in &model.branches {
                let BranchLayers::Hyperbolic(layers) = &branch.layers else {
                    unreachable!("hyperbolic model with euclidean branch")
                };
                let temporal = match branch.kind {
                    BranchKind::Temporal => Some(tape.leaf(htrg_adjacency(t, cfg.gamma)?.weights)),
                    BranchKind::Similarity => None,
                };
                let mut x = lifted;
                for layer in layers {
                    let adj = match temporal {
                        Some(a) => a,
                        None => similarity_graph(tape, x, k, cfg.tau),
                    };
                    let y = hl_tape(tape, p, &model.store, layer, x, k, mode)?;
                    x = aggregate(tape, adj, y, k)?;
                }
                let n1 = tape.value(x).cols();
                let s = tape.slice_cols(x, 1, n1);
                let s = activate(tape, s, cfg.leaky_slope, cfg.dropout, mode);
                outputs.push(tape.lorentz_time(s, k));
            }
        }
        Geometry::Euclidean => {
            for branch in &model.branches {
                let BranchLayers::Euclidean(layers) = &branch.layers else {
                    unreachable!("euclidean model with hyperbolic branch")
                };
                let temporal = match branch.kind {
                    BranchKind::Temporal => {
                        Some(tape.leaf(row_normalized(&htrg_adjacency(t, cfg.gamma)?.weights)))
                    }
                    BranchKind::Similarity => None,
                };
                let mut h = fused;
                for layer in layers {
                    let adj = match temporal {
                        Some(a) => a,
                        None => cosine_graph(tape, h, cfg.tau),
                    };
                    let x = linear(tape, p, layer, h);
                    let x = dropout(tape, x, cfg.hl_dropout, mode);
                    let m = tape.matmul(adj, x);
                    h = tape.leaky_relu(m, cfg.leaky_slope);
                }
                outputs.push(activate(tape, h, cfg.leaky_slope, cfg.dropout, mode));
            }
        }
    }
    let mut concat = outputs[0];
    for &o in &outputs[1..] {
        concat = tape.concat_cols(concat, o);
    }
    let logits = match &model.head {
        Head::Hyperbolic(c) => {
            let m = tape.value(concat).cols();
            let mut sign = Matrix::filled(1, m, 1.0);
            sign[(0, 0)] = -1.0;
            let w = tape.mul_const(p.get(c.weight), sign);
            let z = tape.matmul_bt(concat, w);
            let z = tape.scale(z, c.epsilon);
            let z = tape.add_scalar(z, c.epsilon);
            tape.add(z, p.get(c.bias))
        }
        Head::Euclidean(lin) => linear(tape, p, lin, concat),
    };
    Ok(tape.sigmoid(logits))
}
