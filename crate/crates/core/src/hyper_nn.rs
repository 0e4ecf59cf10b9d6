//! Fully hyperbolic building blocks: the hyperbolic linear layer,
//! Lorentzian neighborhood aggregation and the hyperbolic classifier head.

use crate::error::{Error, Result};
use crate::lorentz::{Curvature, LorentzPoint};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, leaky_relu, sigmoid, Matrix};
use crate::{dropout_mask, Mode, Rng};

/// Parameter handles of one hyperbolic linear layer mapping `L^n -> L^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperbolicLinear {
    pub weight: ParamId,
    pub velocity: ParamId,
    pub bias: ParamId,
    pub gate_bias: ParamId,
    pub scale: ParamId,
    /// Ambient input length `n + 1`.
    pub in_dim: usize,
    /// Spatial output width `d`; outputs have `d + 1` coordinates.
    pub out_dim: usize,
    pub dropout_rate: f64,
    pub slope: f64,
}

impl HyperbolicLinear {
    /// `W`, `v` Xavier-uniform; `b`, `b'` zero; `lambda = 1`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        dropout_rate: f64,
        slope: f64,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.xavier_matrix(&format!("{prefix}.weight"), out_dim, in_dim, rng);
        let velocity = store.xavier_vector(&format!("{prefix}.velocity"), in_dim, in_dim, 1, rng);
        let bias = store.zeros_vector(&format!("{prefix}.bias"), out_dim);
        let gate_bias = store.scalar(&format!("{prefix}.gate_bias"), 0.0);
        let scale = store.scalar(&format!("{prefix}.scale"), 1.0);
        Self {
            weight,
            velocity,
            bias,
            gate_bias,
            scale,
            in_dim,
            out_dim,
            dropout_rate,
            slope,
        }
    }

    pub fn view<'a>(&self, store: &'a ParamStore) -> HyperbolicLinearParams<'a> {
        HyperbolicLinearParams {
            weight: store.get(self.weight),
            velocity: store.get(self.velocity).as_slice(),
            bias: store.get(self.bias).as_slice(),
            gate_bias: store.scalar_value(self.gate_bias),
            scale: store.scalar_value(self.scale),
            dropout_rate: self.dropout_rate,
            slope: self.slope,
        }
    }
}

/// Borrowed values of a hyperbolic linear layer.
///
/// `weight` is `d x (n+1)`, `velocity` has `n + 1` entries, `bias` has `d`.
/// The activation `h` is a LeakyReLU with negative slope `slope`, applied to
/// the spatial coordinates only.
#[derive(Clone, Copy, Debug)]
pub struct HyperbolicLinearParams<'a> {
    pub weight: &'a Matrix,
    pub velocity: &'a [f64],
    pub bias: &'a [f64],
    pub gate_bias: f64,
    pub scale: f64,
    pub dropout_rate: f64,
    pub slope: f64,
}

impl HyperbolicLinearParams<'_> {
    pub fn validate(&self) -> Result<()> {
        let (d, n1) = self.weight.shape();
        if self.velocity.len() != n1 || self.bias.len() != d {
            return Err(Error::Dimension(format!(
                "hyperbolic linear: W is {d}x{n1}, v has {}, b has {}",
                self.velocity.len(),
                self.bias.len()
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!(
                "hyperbolic linear scale must be > 0, got {}",
                self.scale
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Hyperbolic linear layer.
///
/// `phi = lambda * sigmoid(v.x + b') / |W h(x~) + b| * (W h(x~) + b)` where
/// `x~` is `x` with dropout on its spatial coordinates (train mode only), and
/// the output is `(sqrt(|phi|^2 - 1/K), phi)`.
pub fn hl_forward(
    params: &HyperbolicLinearParams<'_>,
    x: &LorentzPoint,
    mode: &mut Mode<'_>,
) -> Result<LorentzPoint> {
    params.validate()?;
    let coords = x.coords();
    if params.weight.cols() != coords.len() {
        return Err(Error::Dimension(format!(
            "hyperbolic linear expects {} input coordinates, got {}",
            params.weight.cols(),
            coords.len()
        )));
    }

    let mut h = coords.to_vec();
    if let Mode::Train(rng) = mode {
        if params.dropout_rate > 0.0 {
            let mask = dropout_mask(rng, h.len() - 1, params.dropout_rate);
            h[1..].iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        }
    }
    h[1..].iter_mut().for_each(|v| *v = leaky_relu(*v, params.slope));

    let u: Vec<f64> = params
        .weight
        .row_iter()
        .zip(params.bias)
        .map(|(w, b)| dot(w, &h) + b)
        .collect();
    let u_norm = dot(&u, &u).sqrt();
    if u_norm == 0.0 || !u_norm.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    let gate = sigmoid(dot(params.velocity, coords) + params.gate_bias);
    let factor = params.scale * gate / u_norm;
    let phi: Vec<f64> = u.iter().map(|ui| factor * ui).collect();
    Ok(LorentzPoint::from_spatial(&phi, x.curvature()))
}

/// Lorentzian centroid `sum_j w_j y_j / (sqrt(-K) | |sum_k w_k y_k|_L |)`.
pub fn hyper_agg(weights: &[f64], points: &[LorentzPoint]) -> Result<LorentzPoint> {
    if weights.len() != points.len() || points.is_empty() {
        return Err(Error::Dimension(format!(
            "aggregation over {} points with {} weights",
            points.len(),
            weights.len()
        )));
    }
    let curvature = points[0].curvature();
    let len = points[0].coords().len();
    let mut m = vec![0.0; len];
    for (w, p) in weights.iter().zip(points) {
        if p.curvature() != curvature || p.coords().len() != len {
            return Err(Error::Dimension(
                "aggregated points differ in curvature or dimension".into(),
            ));
        }
        if *w != 0.0 {
            m.iter_mut().zip(p.coords()).for_each(|(mi, yi)| *mi += w * yi);
        }
    }
    normalize_timelike(m, curvature)
}

/// Rescales a future-pointing time-like vector onto the hyperboloid.
pub(crate) fn normalize_timelike(mut m: Vec<f64>, curvature: Curvature) -> Result<LorentzPoint> {
    let q = -m[0] * m[0] + dot(&m[1..], &m[1..]);
    if !(q < 0.0) || !(m[0] > 0.0) {
        return Err(Error::DegenerateAggregation(q));
    }
    let denom = curvature.sqrt_neg() * (-q).sqrt();
    m.iter_mut().for_each(|v| *v /= denom);
    Ok(LorentzPoint::from_raw(m, curvature))
}

/// Parameter handles of the hyperbolic classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub weight: ParamId,
    pub bias: ParamId,
    pub epsilon: f64,
    pub in_dim: usize,
}

impl Classifier {
    pub fn init(store: &mut ParamStore, prefix: &str, in_dim: usize, epsilon: f64, rng: &mut Rng) -> Self {
        let weight = store.xavier_vector(&format!("{prefix}.weight"), in_dim, in_dim, 1, rng);
        let bias = store.scalar(&format!("{prefix}.bias"), 0.0);
        Self {
            weight,
            bias,
            epsilon,
            in_dim,
        }
    }

    pub fn view<'a>(&self, store: &'a ParamStore) -> ClassifierParams<'a> {
        ClassifierParams {
            weight: store.get(self.weight).as_slice(),
            bias: store.scalar_value(self.bias),
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierParams<'a> {
    pub weight: &'a [f64],
    pub bias: f64,
    pub epsilon: f64,
}

/// `sigmoid(eps + eps * <concat, W>_L + b)`, index 0 being the only
/// time-like coordinate of the concatenated vector.
pub fn classifier_forward(params: &ClassifierParams<'_>, concat: &[f64]) -> Result<f64> {
    let z = crate::lorentz::minkowski_inner(concat, params.weight)?;
    Ok(sigmoid(params.epsilon + params.epsilon * z + params.bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{lift_to_manifold, minkowski_inner};
    use rand::{Rng as _, SeedableRng};

    fn random_vec(rng: &mut Rng, n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-a..a)).collect()
    }

    fn layer(store: &mut ParamStore, n1: usize, d: usize, rng: &mut Rng) -> HyperbolicLinear {
        HyperbolicLinear::init(store, "hl", n1, d, 0.6, 0.01, rng)
    }

    #[test]
    fn hl_output_is_on_manifold() {
        let mut rng = Rng::seed_from_u64(1);
        let k = Curvature::default();
        for trial in 0..200 {
            let mut store = ParamStore::new();
            let l = layer(&mut store, 6, 4, &mut rng);
            let v = random_vec(&mut rng, 5, 3.0);
            let x = lift_to_manifold(&v, k);
            let mut drop_rng = Rng::seed_from_u64(trial);
            let mut mode = if trial % 2 == 0 {
                Mode::Eval
            } else {
                Mode::Train(&mut drop_rng)
            };
            let y = hl_forward(&l.view(&store), &x, &mut mode).unwrap();
            assert_eq!(y.coords().len(), 5);
            assert!(y.residual() <= 1e-9);
        }
    }

    #[test]
    fn unit_phi_gives_sqrt_two_time_coordinate() {
        let y = LorentzPoint::from_spatial(&[1.0, 0.0, 0.0], Curvature::default());
        assert!((y.coords()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(&y.coords()[1..], &[1.0, 0.0, 0.0]);

        // construct params so that phi = (1, 0, 0): W h(x) + b points along e1,
        // gate saturated at lambda/sigma = 1
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        let l = layer(&mut store, 3, 3, &mut rng);
        store.get_mut(l.weight).as_mut_slice().fill(0.0);
        store.get_mut(l.bias).as_mut_slice().copy_from_slice(&[2.0, 0.0, 0.0]);
        store.get_mut(l.velocity).as_mut_slice().fill(0.0);
        // sigmoid(0) = 0.5, so lambda = 2 yields |phi| = 1
        store.get_mut(l.scale).as_mut_slice()[0] = 2.0;
        let x = lift_to_manifold(&[0.2, -0.4], Curvature::default());
        let y = hl_forward(&l.view(&store), &x, &mut Mode::Eval).unwrap();
        assert!((y.coords()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((y.coords()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_ignores_dropout_rate() {
        let mut rng = Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let l = layer(&mut store, 5, 3, &mut rng);
        let x = lift_to_manifold(&[0.5, -1.0, 0.3, 0.7], Curvature::default());
        let mut with = l.view(&store);
        with.dropout_rate = 0.6;
        let mut without = l.view(&store);
        without.dropout_rate = 0.0;
        let a = hl_forward(&with, &x, &mut Mode::Eval).unwrap();
        let b = hl_forward(&without, &x, &mut Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_dropout_changes_output_but_stays_on_manifold() {
        let mut rng = Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let l = layer(&mut store, 9, 4, &mut rng);
        let x = lift_to_manifold(&random_vec(&mut rng, 8, 1.0), Curvature::default());
        let eval = hl_forward(&l.view(&store), &x, &mut Mode::Eval).unwrap();
        let mut drop_rng = Rng::seed_from_u64(10);
        let train = hl_forward(&l.view(&store), &x, &mut Mode::Train(&mut drop_rng)).unwrap();
        assert_ne!(eval, train);
        assert!(train.residual() <= 1e-9);
    }

    #[test]
    fn degenerate_direction_is_an_error() {
        let mut rng = Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let l = layer(&mut store, 3, 2, &mut rng);
        store.get_mut(l.weight).as_mut_slice().fill(0.0);
        let x = lift_to_manifold(&[0.1, 0.2], Curvature::default());
        assert!(matches!(
            hl_forward(&l.view(&store), &x, &mut Mode::Eval),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn hl_rejects_bad_shapes_and_scale() {
        let mut rng = Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let l = layer(&mut store, 4, 2, &mut rng);
        let x = lift_to_manifold(&[0.1, 0.2], Curvature::default());
        assert!(matches!(
            hl_forward(&l.view(&store), &x, &mut Mode::Eval),
            Err(Error::Dimension(_))
        ));
        let mut p = l.view(&store);
        p.scale = 0.0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn aggregation_examples() {
        let k = Curvature::default();
        let p = lift_to_manifold(&[0.3, -0.7, 1.1], k);
        let single = hyper_agg(&[1.0], std::slice::from_ref(&p)).unwrap();
        for (a, b) in single.coords().iter().zip(p.coords()) {
            assert!((a - b).abs() < 1e-14);
        }
        let pair = hyper_agg(&[0.5, 0.5], &[p.clone(), p.clone()]).unwrap();
        for (a, b) in pair.coords().iter().zip(p.coords()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(matches!(
            hyper_agg(&[0.0, 0.0], &[p.clone(), p.clone()]),
            Err(Error::DegenerateAggregation(_))
        ));
        assert!(hyper_agg(&[1.0], &[]).is_err());
    }

    #[test]
    fn aggregation_output_is_on_manifold() {
        let mut rng = Rng::seed_from_u64(4);
        let k = Curvature::default();
        for _ in 0..500 {
            let m = rng.random_range(1..8);
            let points: Vec<_> = (0..m)
                .map(|_| lift_to_manifold(&random_vec(&mut rng, 4, 2.0), k))
                .collect();
            let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            weights[0] += 1e-6;
            let out = hyper_agg(&weights, &points).unwrap();
            assert!(out.residual() <= 1e-9);
        }
    }

    #[test]
    fn classifier_examples() {
        let w = [0.0, 1.0, 0.0, 0.0];
        let params = ClassifierParams {
            weight: &w,
            bias: 0.0,
            epsilon: 2.0,
        };
        // <c, w>_L = 0 since c has zero in the only weighted coordinate
        let s = classifier_forward(&params, &[1.5, 0.0, 2.0, 3.0]).unwrap();
        assert!((s - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert!(classifier_forward(&params, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn classifier_is_monotone_and_bounded() {
        let w = [0.3, -0.2, 0.5];
        let params = ClassifierParams {
            weight: &w,
            bias: 0.1,
            epsilon: 2.0,
        };
        let mut prev = 0.0;
        for i in 0..50 {
            // <c, w>_L grows with the second coordinate since w_2 = 0.5 > 0
            let c = [1.0, 0.0, -3.0 + 0.12 * i as f64];
            let s = classifier_forward(&params, &c).unwrap();
            assert!(s > 0.0 && s < 1.0);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn classifier_odd_symmetry() {
        let mut rng = Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c = random_vec(&mut rng, 6, 2.0);
            let w = random_vec(&mut rng, 6, 1.0);
            let params = ClassifierParams {
                weight: &w,
                bias: 0.0,
                epsilon: 2.0,
            };
            let neg: Vec<f64> = c.iter().map(|v| -v).collect();
            let z = minkowski_inner(&c, &w).unwrap();
            let lhs = classifier_forward(&params, &neg).unwrap();
            assert!((lhs - sigmoid(2.0 - 2.0 * z)).abs() < 1e-14);
        }
    }
}
