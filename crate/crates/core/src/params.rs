//! Named learnable tensors.
//!
//! Every learnable scalar of a model lives in one [`ParamStore`]. Layers hold
//! [`ParamId`]s into the store, which lets the plain forward pass, the
//! differentiable forward pass, the optimizer and the checkpoint writer all
//! agree on a single ordering.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Logical rank of a stored tensor, recorded in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Scalar => vec![],
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match *dims {
            [] => Ok(Shape::Scalar),
            [n] => Ok(Shape::Vector(n)),
            [r, c] => Ok(Shape::Matrix(r, c)),
            _ => Err(Error::Dimension(format!("unsupported rank {}", dims.len()))),
        }
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Storage layout: vectors are kept as `1 x n` rows.
    fn matrix_shape(&self) -> (usize, usize) {
        match *self {
            Shape::Scalar => (1, 1),
            Shape::Vector(n) => (1, n),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Shape,
    pub value: Matrix,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Shape, value: Matrix) -> ParamId {
        let name = name.into();
        assert_eq!(
            value.shape(),
            shape.matrix_shape(),
            "parameter `{name}` value does not match its declared shape"
        );
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter `{name}`"
        );
        self.params.push(Param { name, shape, value });
        ParamId(self.params.len() - 1)
    }

    /// Matrix with Xavier-uniform entries, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_matrix(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let data = xavier_uniform(rng, cols, rows, rows * cols);
        let value = Matrix::from_vec(rows, cols, data).expect("shape");
        self.register(name, Shape::Matrix(rows, cols), value)
    }

    /// Vector with Xavier-uniform entries for the given fans.
    pub fn xavier_vector(
        &mut self,
        name: &str,
        len: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let data = xavier_uniform(rng, fan_in, fan_out, len);
        self.register(name, Shape::Vector(len), Matrix::row_vector(data))
    }

    pub fn zeros_vector(&mut self, name: &str, len: usize) -> ParamId {
        self.register(name, Shape::Vector(len), Matrix::zeros(1, len))
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> ParamId {
        self.register(name, Shape::Scalar, Matrix::scalar(value))
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    #[inline]
    pub fn scalar_value(&self, id: ParamId) -> f64 {
        self.params[id.0].value.as_slice()[0]
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }
}

/// Exact number of learnable scalars in the store.
pub fn count_parameters(store: &ParamStore) -> usize {
    store.params.iter().map(|p| p.shape.numel()).sum()
}

/// `len` draws from `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-a..a)).collect()
}

/// A per-snippet affine map `x W^T + b`, `W` stored `out x in`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = store.xavier_matrix(&format!("{prefix}.weight"), out_dim, in_dim, rng);
        let bias = store.zeros_vector(&format!("{prefix}.bias"), out_dim);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Applies the layer to every row of `x`.
    pub fn apply(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul_bt(store.get(self.weight))?;
        let bias = store.get(self.bias).as_slice();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_linear_counts_weights_and_bias() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from_u64(0);
        Linear::init(&mut store, "fc", 2, 3, &mut rng);
        assert_eq!(count_parameters(&store), 9);
    }

    #[test]
    fn init_is_deterministic_and_biases_are_zero() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = Rng::seed_from_u64(42);
            let l = Linear::init(&mut store, "fc", 5, 4, &mut rng);
            (store, l)
        };
        let (a, l) = build();
        let (b, _) = build();
        assert_eq!(a, b);
        assert!(a.get(l.bias).as_slice().iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 9.0).sqrt();
        assert!(a.get(l.weight).as_slice().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn xavier_sample_mean_is_centered() {
        let mut rng = Rng::seed_from_u64(3);
        let (fan_in, fan_out) = (50, 50);
        let draws = xavier_uniform(&mut rng, fan_in, fan_out, 10_000);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let sigma = a / 3f64.sqrt();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() <= 3.0 * sigma / 100.0, "mean {mean}");
    }

    #[test]
    fn linear_apply_adds_bias_per_row() {
        let mut store = ParamStore::new();
        let w = store.register(
            "w",
            Shape::Matrix(2, 2),
            Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
        );
        let b = store.register("b", Shape::Vector(2), Matrix::row_vector(vec![0.5, -0.5]));
        let lin = Linear {
            weight: w,
            bias: b,
            in_dim: 2,
            out_dim: 2,
        };
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let y = lin.apply(&store, &x).unwrap();
        assert_eq!(y.as_slice(), &[3.5, 6.5, 2.5, 3.5]);
    }

    #[test]
    fn shape_dims_roundtrip() {
        for s in [Shape::Scalar, Shape::Vector(4), Shape::Matrix(2, 3)] {
            assert_eq!(Shape::from_dims(&s.dims()).unwrap(), s);
        }
        assert!(Shape::from_dims(&[1, 2, 3]).is_err());
    }
}
