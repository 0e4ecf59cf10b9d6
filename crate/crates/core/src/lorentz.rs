//! Lorentz (hyperboloid) model of hyperbolic space.
//!
//! Points live on the upper sheet `{x in R^{n+1} : <x,x>_L = 1/K, x_0 > 0}`
//! where `<x,y>_L = -x_0 y_0 + sum_{i>=1} x_i y_i` and `K < 0` is the
//! curvature. All arithmetic is carried out in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::dot;

/// Tolerance used when validating that coordinates lie on the hyperboloid.
pub const MANIFOLD_TOLERANCE: f64 = 1e-6;

/// Below this Lorentzian norm a tangent vector is treated as zero.
pub const ZERO_TANGENT: f64 = 1e-12;

/// Constant negative sectional curvature `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if k < 0.0 && k.is_finite() {
            Ok(Self(k))
        } else {
            Err(Error::Curvature(k))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `sqrt(-K)`
    #[inline]
    pub fn sqrt_neg(self) -> f64 {
        (-self.0).sqrt()
    }

    /// `1/K`, the squared Lorentzian norm of every manifold point.
    #[inline]
    pub fn self_inner(self) -> f64 {
        1.0 / self.0
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self(-1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;

    fn try_from(k: f64) -> Result<Self> {
        Self::new(k)
    }
}

impl From<Curvature> for f64 {
    fn from(k: Curvature) -> f64 {
        k.0
    }
}

/// A point on the hyperboloid, stored in ambient Minkowski coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl LorentzPoint {
    /// Validates `<x,x>_L = 1/K` (relative tolerance 1e-6) and `x_0 > 0`.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Dimension(format!(
                "a Lorentz point needs at least 2 coordinates, got {}",
                coords.len()
            )));
        }
        let point = Self { coords, curvature };
        let target = curvature.self_inner();
        let scale = target.abs().max(point.coords[0] * point.coords[0]);
        if !(point.coords[0] > 0.0) || point.residual() > MANIFOLD_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "coordinates are off the hyperboloid (residual {:e})",
                point.residual()
            )));
        }
        Ok(point)
    }

    /// Wraps coordinates that are on the manifold by construction.
    pub(crate) fn from_raw(coords: Vec<f64>, curvature: Curvature) -> Self {
        debug_assert!(coords.len() >= 2);
        Self { coords, curvature }
    }

    /// Builds a point from its spatial part, solving for the time coordinate.
    pub fn from_spatial(spatial: &[f64], curvature: Curvature) -> Self {
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push((dot(spatial, spatial) - curvature.self_inner()).sqrt());
        coords.extend_from_slice(spatial);
        Self { coords, curvature }
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    #[inline]
    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    #[inline]
    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// Manifold dimension `n` (ambient length is `n + 1`).
    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    /// `|<x,x>_L - 1/K|`
    pub fn residual(&self) -> f64 {
        (inner(&self.coords, &self.coords) - self.curvature.self_inner()).abs()
    }
}

/// A vector in the tangent space at `base`: `<base, z>_L = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: LorentzPoint,
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: LorentzPoint, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != base.coords.len() {
            return Err(Error::Dimension(format!(
                "tangent vector has {} coordinates, base point has {}",
                coords.len(),
                base.coords.len()
            )));
        }
        let scale = 1.0f64
            .max(lorentz_norm(&base.coords) * lorentz_norm(&coords))
            .max(base.coords[0] * coords[0].abs());
        let ortho = inner(&base.coords, &coords);
        if ortho.abs() > MANIFOLD_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "vector is not tangent at base (<x,z>_L = {ortho:e})"
            )));
        }
        Ok(Self { base, coords })
    }

    /// Orthogonal projection of an ambient vector onto the tangent space:
    /// `v - K <x,v>_L x`.
    pub fn project(base: LorentzPoint, v: &[f64]) -> Result<Self> {
        if v.len() != base.coords.len() {
            return Err(Error::Dimension(format!(
                "cannot project a length-{} vector at a length-{} point",
                v.len(),
                base.coords.len()
            )));
        }
        let k = base.curvature.value();
        let c = k * inner(&base.coords, v);
        let coords = v.iter().zip(&base.coords).map(|(vi, xi)| vi - c * xi).collect();
        Ok(Self { base, coords })
    }

    pub fn zero(base: LorentzPoint) -> Self {
        let coords = vec![0.0; base.coords.len()];
        Self { base, coords }
    }

    #[inline]
    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

#[inline]
fn inner(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + dot(&x[1..], &y[1..])
}

/// Lorentzian scalar product `-x_0 y_0 + sum_{i>=1} x_i y_i`.
pub fn minkowski_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "minkowski_inner on lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Dimension(format!(
            "minkowski_inner needs length >= 2, got {}",
            x.len()
        )));
    }
    Ok(inner(x, y))
}

/// `sqrt(|<z,z>_L|)`; the absolute value keeps time-like vectors defined.
pub fn lorentz_norm(z: &[f64]) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    inner(z, z).abs().sqrt()
}

/// `(sqrt(-1/K), 0, ..., 0)` in `n + 1` ambient coordinates.
pub fn origin(n: usize, k: f64) -> Result<LorentzPoint> {
    let curvature = Curvature::new(k)?;
    if n == 0 {
        return Err(Error::Dimension("manifold dimension must be >= 1".into()));
    }
    Ok(origin_of(n, curvature))
}

pub(crate) fn origin_of(n: usize, curvature: Curvature) -> LorentzPoint {
    let mut coords = vec![0.0; n + 1];
    coords[0] = (-1.0 / curvature.value()).sqrt();
    LorentzPoint { coords, curvature }
}

fn check_same_curvature(a: Curvature, b: Curvature) -> Result<()> {
    if a != b {
        return Err(Error::Config(format!(
            "curvature mismatch: {} vs {}",
            a.value(),
            b.value()
        )));
    }
    Ok(())
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "points of ambient length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Exponential map at `x`.
///
/// `cosh(sqrt(-K)|z|_L) x + sinh(sqrt(-K)|z|_L) z / (sqrt(-K)|z|_L)`, with
/// the removable singularity at `|z|_L = 0` returning `x`.
pub fn exp_map(x: &LorentzPoint, z: &TangentVector) -> Result<LorentzPoint> {
    check_same_len(&x.coords, &z.coords)?;
    check_same_curvature(x.curvature, z.base.curvature)?;
    if z.base.coords != x.coords {
        return Err(Error::Config(
            "tangent vector is attached to a different base point".into(),
        ));
    }
    let znorm = lorentz_norm(&z.coords);
    if znorm < ZERO_TANGENT {
        return Ok(x.clone());
    }
    let theta = x.curvature.sqrt_neg() * znorm;
    let (c, s) = (theta.cosh(), theta.sinh() / theta);
    let coords = x
        .coords
        .iter()
        .zip(&z.coords)
        .map(|(xi, zi)| c * xi + s * zi)
        .collect();
    Ok(LorentzPoint::from_raw(coords, x.curvature))
}

/// Logarithmic map at `x`, the inverse of [`exp_map`].
///
/// The tangent direction is `y - K<x,y>_L x`; its length is the arc
/// parameter `arccosh(K<x,y>_L) / sqrt(-K)` so that `exp_x(log_x(y)) = y`
/// for every curvature (the two coincide for `K = -1`).
pub fn log_map(x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    check_same_len(&x.coords, &y.coords)?;
    check_same_curvature(x.curvature, y.curvature)?;
    let k = x.curvature.value();
    let xy = inner(&x.coords, &y.coords);
    let dir: Vec<f64> = y
        .coords
        .iter()
        .zip(&x.coords)
        .map(|(yi, xi)| yi - k * xy * xi)
        .collect();
    let dir_norm = lorentz_norm(&dir);
    let arc = (k * xy).max(1.0).acosh() / x.curvature.sqrt_neg();
    if arc == 0.0 || dir_norm < ZERO_TANGENT {
        return Ok(TangentVector::zero(x.clone()));
    }
    let scale = arc / dir_norm;
    Ok(TangentVector {
        base: x.clone(),
        coords: dir.into_iter().map(|d| d * scale).collect(),
    })
}

/// `arccosh(max(K<x,y>_L, 1))`
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_same_len(&x.coords, &y.coords)?;
    check_same_curvature(x.curvature, y.curvature)?;
    Ok(distance_unchecked(&x.coords, &y.coords, x.curvature))
}

#[inline]
pub(crate) fn distance_unchecked(x: &[f64], y: &[f64], curvature: Curvature) -> f64 {
    (curvature.value() * inner(x, y)).max(1.0).acosh()
}

/// Lifts a Euclidean feature vector onto the manifold by applying the
/// exponential map at the origin to the tangent vector `(0, v)`.
pub fn lift_to_manifold(v: &[f64], curvature: Curvature) -> LorentzPoint {
    let alpha = curvature.sqrt_neg();
    let r = dot(v, v).sqrt();
    let theta = alpha * r;
    let mut coords = Vec::with_capacity(v.len() + 1);
    coords.push(theta.cosh() / alpha);
    // sinh(theta)/theta -> 1 as theta -> 0
    let s = if theta < ZERO_TANGENT {
        1.0
    } else {
        theta.sinh() / theta
    };
    coords.extend(v.iter().map(|vi| s * vi));
    LorentzPoint::from_raw(coords, curvature)
}
