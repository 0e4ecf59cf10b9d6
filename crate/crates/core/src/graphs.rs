//! Snippet-relation graphs: the Lorentzian feature-similarity graph and the
//! temporal-relation graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorentz::{distance_unchecked, LorentzPoint};
use crate::tensor::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyKind {
    Similarity,
    Temporal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    pub weights: Matrix,
    pub kind: AdjacencyKind,
}

impl AdjacencyMatrix {
    pub fn len(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.weights.row(i)
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.as_slice().iter().filter(|&&v| v != 0.0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Similarity threshold; entries with `exp(-d) <= tau` are dropped.
    pub tau: f64,
    /// Temporal decay exponent.
    pub gamma: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            gamma: 1.0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must be in [0, 1), got {tau}")));
    }
    Ok(())
}

/// Row softmax restricted to entries where `keep` is set; dropped entries get
/// exactly zero probability. Every row must keep at least one entry.
pub fn masked_row_softmax(logits: &Matrix, keep: &[bool]) -> Matrix {
    assert_eq!(logits.len(), keep.len());
    let cols = logits.cols();
    let mut out = Matrix::zeros(logits.rows(), cols);
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let mask = &keep[i * cols..(i + 1) * cols];
        let max = row
            .iter()
            .zip(mask)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        let mut total = 0.0;
        for j in 0..cols {
            if mask[j] {
                o[j] = (row[j] - max).exp();
                total += o[j];
            }
        }
        o.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Hyperbolic feature-similarity graph.
///
/// `g(i,j) = exp(-d(x_i, x_j))`; entries with `g <= tau` are masked out and
/// each row is softmax-normalized over the surviving entries. The diagonal
/// (`g = 1`) always survives.
pub fn hfsg_adjacency(points: &[LorentzPoint], tau: f64) -> Result<AdjacencyMatrix> {
    check_tau(tau)?;
    if points.is_empty() {
        return Err(Error::Dimension("similarity graph over zero snippets".into()));
    }
    let t = points.len();
    let curvature = points[0].curvature();
    let mut g = Matrix::zeros(t, t);
    for i in 0..t {
        g[(i, i)] = 1.0;
        for j in (i + 1)..t {
            if points[j].coords().len() != points[i].coords().len() {
                return Err(Error::Dimension("snippet embeddings differ in length".into()));
            }
            let s = (-distance_unchecked(points[i].coords(), points[j].coords(), curvature)).exp();
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    let keep: Vec<bool> = g.as_slice().iter().map(|&v| v > tau).collect();
    Ok(AdjacencyMatrix {
        weights: masked_row_softmax(&g, &keep),
        kind: AdjacencyKind::Similarity,
    })
}

/// Cosine-similarity graph used by the Euclidean baseline, thresholded and
/// softmax-normalized the same way as [`hfsg_adjacency`].
pub fn cosine_adjacency(features: &Matrix, tau: f64) -> Result<AdjacencyMatrix> {
    check_tau(tau)?;
    if features.rows() == 0 {
        return Err(Error::Dimension("similarity graph over zero snippets".into()));
    }
    let normed: Vec<Vec<f64>> = features
        .row_iter()
        .map(|r| {
            let n = (dot(r, r) + COSINE_EPS).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let t = features.rows();
    let mut s = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            s[(i, j)] = dot(&normed[i], &normed[j]);
        }
    }
    let keep: Vec<bool> = (0..t * t)
        .map(|idx| idx / t == idx % t || s.as_slice()[idx] > tau)
        .collect();
    Ok(AdjacencyMatrix {
        weights: masked_row_softmax(&s, &keep),
        kind: AdjacencyKind::Similarity,
    })
}

/// Stabilizer inside the cosine-similarity row norms.
pub const COSINE_EPS: f64 = 1e-12;

/// Temporal-relation graph `A(i,j) = exp(-|i-j|^gamma)`, used unnormalized.
pub fn htrg_adjacency(t: usize, gamma: f64) -> Result<AdjacencyMatrix> {
    if t == 0 {
        return Err(Error::Dimension("temporal graph over zero snippets".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be > 0, got {gamma}")));
    }
    let mut a = Matrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            let gap = i.abs_diff(j) as f64;
            a[(i, j)] = (-gap.powf(gamma)).exp();
        }
    }
    Ok(AdjacencyMatrix {
        weights: a,
        kind: AdjacencyKind::Temporal,
    })
}

/// Row-normalized copy, as used by the Euclidean baseline's aggregation.
pub fn row_normalized(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let s: f64 = out.row(i).iter().sum();
        if s != 0.0 {
            out.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::{lift_to_manifold, Curvature};
    use crate::Rng;
    use rand::{seq::SliceRandom, Rng as _, SeedableRng};

    fn random_points(rng: &mut Rng, t: usize, n: usize, a: f64) -> Vec<LorentzPoint> {
        (0..t)
            .map(|_| {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-a..a)).collect();
                lift_to_manifold(&v, Curvature::default())
            })
            .collect()
    }

    #[test]
    fn identical_points_give_uniform_rows() {
        let p = lift_to_manifold(&[0.3, 0.4], Curvature::default());
        let a = hfsg_adjacency(&vec![p; 4], 0.5).unwrap();
        assert!(a.weights.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_snippet() {
        let p = lift_to_manifold(&[1.0, -2.0], Curvature::default());
        let a = hfsg_adjacency(&[p], 0.7).unwrap();
        assert_eq!(a.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn two_snippets_at_unit_distance() {
        let k = Curvature::default();
        let x1 = lift_to_manifold(&[0.0, 0.0], k);
        let x2 = lift_to_manifold(&[1.0, 0.0], k);
        let a = hfsg_adjacency(&[x1, x2], 0.3).unwrap();
        let e = std::f64::consts::E;
        let off = e.powf(1.0 / e) / (e + e.powf(1.0 / e));
        assert!((a.weights[(0, 1)] - off).abs() < 1e-12);
        // the closed form is 0.34703; the quoted four-digit value is only approximate
        assert!((a.weights[(0, 1)] - 0.3467).abs() < 1e-3);
        assert!((a.weights[(1, 0)] - off).abs() < 1e-12);
    }

    #[test]
    fn tau_out_of_range_is_config_error() {
        let p = lift_to_manifold(&[0.0], Curvature::default());
        assert!(matches!(hfsg_adjacency(&[p.clone()], 1.0), Err(Error::Config(_))));
        assert!(matches!(hfsg_adjacency(&[p], -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn similarity_rows_are_stochastic_and_masked() {
        let mut rng = Rng::seed_from_u64(8);
        for _ in 0..50 {
            let pts = random_points(&mut rng, 7, 3, 0.8);
            let a = hfsg_adjacency(&pts, 0.4).unwrap();
            for i in 0..7 {
                let s: f64 = a.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                for j in 0..7 {
                    let d = crate::lorentz::geodesic_distance(&pts[i], &pts[j]).unwrap();
                    if (-d).exp() <= 0.4 {
                        assert_eq!(a.weights[(i, j)], 0.0);
                    } else {
                        assert!(a.weights[(i, j)] > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn similarity_is_permutation_equivariant() {
        let mut rng = Rng::seed_from_u64(12);
        let pts = random_points(&mut rng, 6, 3, 0.6);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<_> = perm.iter().map(|&i| pts[i].clone()).collect();
        let a = hfsg_adjacency(&pts, 0.5).unwrap();
        let b = hfsg_adjacency(&permuted, 0.5).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((b.weights[(i, j)] - a.weights[(perm[i], perm[j])]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn raising_tau_never_adds_edges() {
        let mut rng = Rng::seed_from_u64(13);
        let pts = random_points(&mut rng, 10, 4, 0.5);
        let mut prev = usize::MAX;
        for step in 0..10 {
            let tau = step as f64 * 0.1;
            let n = hfsg_adjacency(&pts, tau).unwrap().nonzero_count();
            assert!(n <= prev);
            assert!(n >= 10);
            prev = n;
        }
    }

    #[test]
    fn temporal_graph_examples() {
        let a = htrg_adjacency(6, 1.0).unwrap();
        for i in 0..6 {
            assert_eq!(a.weights[(i, i)], 1.0);
        }
        assert!((a.weights[(2, 3)] - 0.367_879_441_171_442_33).abs() < 1e-15);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(a.weights[(i, j)], a.weights[(j, i)]);
                if i > 0 && j > 0 {
                    assert_eq!(a.weights[(i, j)], a.weights[(i - 1, j - 1)]);
                }
            }
        }
        assert!(htrg_adjacency(0, 1.0).is_err());
        assert!(htrg_adjacency(3, 0.0).is_err());
    }

    #[test]
    fn temporal_weights_decrease_with_gap() {
        for gamma in [0.5, 1.0, 2.0] {
            let a = htrg_adjacency(8, gamma).unwrap();
            for gap in 1..8 {
                assert!(a.weights[(0, gap)] < a.weights[(0, gap - 1)]);
            }
        }
    }

    #[test]
    fn cosine_graph_keeps_diagonal() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let a = cosine_adjacency(&f, 0.5).unwrap();
        assert_eq!(a.weights, Matrix::identity(3));
    }
}
