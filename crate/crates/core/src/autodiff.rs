//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value; [`Tape::backward`] then walks the nodes in reverse and accumulates
//! vector-Jacobian products. Besides the usual dense primitives the tape has
//! fused row-wise Lorentz operations (lift, time restoration, centroid
//! normalization, pairwise distance) whose Jacobians are written out by hand.
//!
//! Shape errors are programming errors here and panic; domain checks
//! (degenerate directions and the like) belong to the callers.

use crate::lorentz::Curvature;
use crate::tensor::{dot, leaky_relu, sigmoid, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBt(Var, Var),
    /// `a + b`, `b` broadcast over rows and/or columns.
    Add(Var, Var),
    /// `a ⊙ b`, `b` broadcast over rows and/or columns.
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Sqrt(Var),
    Recip(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    RowSumSq(Var),
    LorentzLift(Var, Curvature),
    LorentzTime(Var),
    LorentzNormalize(Var, Curvature),
    /// Pairwise distance; holds `d D_ij / d G_ij` with `G = Y J Y^T`.
    LorentzDistance(Var, Matrix),
    MaskedSoftmax(Var, Vec<bool>),
    MeanOfRows(Var, Vec<usize>),
    Bce(Var, f64),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Pairs closer than `arccosh(1 + DISTANCE_GRAD_FLOOR)` are treated as
/// coincident by the distance gradient.
pub const DISTANCE_GRAD_FLOOR: f64 = 1e-10;

/// Clamp applied to probabilities inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b)).expect("matmul shape");
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b)).expect("matmul_bt shape");
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let c = self.leaf(c);
        self.mul(a, c)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| leaky_relu(x, slope));
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hconcat(self.value(b)).expect("concat rows");
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start))
    }

    /// `m x 1` column of squared row norms.
    pub fn row_sum_sq(&mut self, a: Var) -> Var {
        let v = Matrix::column_vector(self.value(a).row_iter().map(|r| dot(r, r)).collect());
        self.push(v, Op::RowSumSq(a))
    }

    /// Row-wise exponential map at the origin of `(0, v)`.
    pub fn lorentz_lift(&mut self, a: Var, k: Curvature) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols() + 1);
        for i in 0..x.rows() {
            let p = crate::lorentz::lift_to_manifold(x.row(i), k);
            out.row_mut(i).copy_from_slice(p.coords());
        }
        self.push(out, Op::LorentzLift(a, k))
    }

    /// Prepends the time coordinate `sqrt(|s|^2 - 1/K)` to each spatial row.
    pub fn lorentz_time(&mut self, a: Var, k: Curvature) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols() + 1);
        for i in 0..x.rows() {
            let s = x.row(i);
            let o = out.row_mut(i);
            o[0] = (dot(s, s) - k.self_inner()).sqrt();
            o[1..].copy_from_slice(s);
        }
        self.push(out, Op::LorentzTime(a))
    }

    /// Row-wise `m / (sqrt(-K) sqrt(|<m,m>_L|))`.
    pub fn lorentz_normalize(&mut self, a: Var, k: Curvature) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for i in 0..x.rows() {
            let r = x.row(i);
            let q = minkowski_sq(r);
            let c = k.sqrt_neg() * q.abs().sqrt();
            out.row_mut(i).iter_mut().for_each(|v| *v /= c);
        }
        self.push(out, Op::LorentzNormalize(a, k))
    }

    /// `T x T` geodesic distances `arccosh(max(K <y_i, y_j>_L, 1))` between
    /// rows. The diagonal is exactly zero. Pairs with `K<y_i,y_j>_L` within
    /// [`DISTANCE_GRAD_FLOOR`] of 1 carry no gradient, since `arccosh'` is
    /// unbounded there.
    pub fn lorentz_distance(&mut self, a: Var, k: Curvature) -> Var {
        let y = self.value(a);
        let t = y.rows();
        let mut dist = Matrix::zeros(t, t);
        let mut factor = Matrix::zeros(t, t);
        for i in 0..t {
            for j in (i + 1)..t {
                let arg = k.value() * minkowski(y.row(i), y.row(j));
                if arg > 1.0 {
                    let d = arg.acosh();
                    dist[(i, j)] = d;
                    dist[(j, i)] = d;
                }
                if arg > 1.0 + DISTANCE_GRAD_FLOOR {
                    let f = k.value() / ((arg - 1.0) * (arg + 1.0)).sqrt();
                    factor[(i, j)] = f;
                    factor[(j, i)] = f;
                }
            }
        }
        self.push(dist, Op::LorentzDistance(a, factor))
    }

    /// Row softmax over entries where `keep` is set; others are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, keep: Vec<bool>) -> Var {
        let v = crate::graphs::masked_row_softmax(self.value(a), &keep);
        self.push(v, Op::MaskedSoftmax(a, keep))
    }

    /// Mean of the selected rows of an `m x 1` column, as a `1 x 1`.
    pub fn mean_of_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols(), 1);
        assert!(!rows.is_empty());
        let mean = rows.iter().map(|&i| x[(i, 0)]).sum::<f64>() / rows.len() as f64;
        self.push(Matrix::scalar(mean), Op::MeanOfRows(a, rows))
    }

    /// Binary cross-entropy of a `1 x 1` probability against label `y`, with
    /// log arguments clamped at [`BCE_CLAMP`].
    pub fn bce(&mut self, a: Var, y: f64) -> Var {
        let s = self.value(a).as_slice()[0];
        let loss = -y * s.max(BCE_CLAMP).ln() - (1.0 - y) * (1.0 - s).max(BCE_CLAMP).ln();
        self.push(Matrix::scalar(loss), Op::Bce(a, y))
    }

    /// Gradients of the `1 x 1` node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(self.value(*b)).expect("shape");
                    let gb = self.value(*a).matmul_at(&g).expect("shape");
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    // out = a b^T: da = g b, db = g^T a
                    let ga = g.matmul(self.value(*b)).expect("shape");
                    let gb = g.matmul_at(self.value(*a)).expect("shape");
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    let gb = reduce_to(&g, self.value(*b).shape());
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = broadcast_zip(&g, self.value(*b), |x, y| x * y);
                    let gab = zip(&g, self.value(*a), |x, y| x * y);
                    let gb = reduce_to(&gab, self.value(*b).shape());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let ga = zip(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { gi * slope });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, &node.value, |gi, s| gi * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip(&g, &node.value, |gi, e| gi * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = zip(&g, &node.value, |gi, r| gi * 0.5 / r);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Recip(a) => {
                    let ga = zip(&g, &node.value, |gi, r| -gi * r * r);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).cols();
                    accumulate(&mut grads, *a, g.slice_cols(0, split));
                    accumulate(&mut grads, *b, g.slice_cols(split, g.cols()));
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowSumSq(a) => {
                    let x = self.value(*a);
                    let mut ga = x.clone();
                    for i in 0..x.rows() {
                        let gi = 2.0 * g[(i, 0)];
                        ga.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LorentzLift(a, k) => {
                    let ga = lift_backward(self.value(*a), &g, *k);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LorentzTime(a) => {
                    let s = self.value(*a);
                    let mut ga = Matrix::zeros(s.rows(), s.cols());
                    for i in 0..s.rows() {
                        let gr = g.row(i);
                        let t = node.value[(i, 0)];
                        let w = gr[0] / t;
                        for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                            *o = gr[j + 1] + w * s[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LorentzNormalize(a, k) => {
                    let m = self.value(*a);
                    let mut ga = Matrix::zeros(m.rows(), m.cols());
                    for i in 0..m.rows() {
                        let r = m.row(i);
                        let gr = g.row(i);
                        let q = minkowski_sq(r);
                        let root = q.abs().sqrt();
                        let c = k.sqrt_neg() * root;
                        // d c / d m = sqrt(-K) sign(q) J m / sqrt(|q|)
                        let gm = dot(gr, r);
                        let coef = gm / (c * c) * k.sqrt_neg() * q.signum() / root;
                        for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                            let jm = if j == 0 { -r[0] } else { r[j] };
                            *o = gr[j] / c - coef * jm;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LorentzDistance(a, factor) => {
                    let y = self.value(*a);
                    let t = y.rows();
                    // dG = g ⊙ factor; dY = (dG + dG^T) Y J
                    let mut sym = Matrix::zeros(t, t);
                    for i in 0..t {
                        for j in 0..t {
                            sym[(i, j)] = g[(i, j)] * factor[(i, j)] + g[(j, i)] * factor[(j, i)];
                        }
                    }
                    let mut ga = sym.matmul(y).expect("shape");
                    for i in 0..t {
                        ga[(i, 0)] = -ga[(i, 0)];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaskedSoftmax(a, keep) => {
                    let p = &node.value;
                    let cols = p.cols();
                    let mut ga = Matrix::zeros(p.rows(), cols);
                    for i in 0..p.rows() {
                        let pr = p.row(i);
                        let gr = g.row(i);
                        let inner = dot(pr, gr);
                        for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                            if keep[i * cols + j] {
                                *o = pr[j] * (gr[j] - inner);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanOfRows(a, rows) => {
                    let x = self.value(*a);
                    let mut ga = Matrix::zeros(x.rows(), 1);
                    let w = g.as_slice()[0] / rows.len() as f64;
                    for &i in rows {
                        ga[(i, 0)] += w;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Bce(a, y) => {
                    let s = self.value(*a).as_slice()[0];
                    let mut d = 0.0;
                    if s > BCE_CLAMP {
                        d -= y / s;
                    }
                    if 1.0 - s > BCE_CLAMP {
                        d += (1.0 - y) / (1.0 - s);
                    }
                    accumulate(&mut grads, *a, Matrix::scalar(g.as_slice()[0] * d));
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` if `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot => *slot = Some(g),
    }
}

#[inline]
fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

#[inline]
fn minkowski_sq(a: &[f64]) -> f64 {
    minkowski(a, a)
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.shape(), b.shape());
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shape")
}

/// Applies `f(a_ij, b_..)` with `b` broadcast to the shape of `a`.
fn broadcast_zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let (m, n) = a.shape();
    let (br, bc) = b.shape();
    assert!(
        (br == m || br == 1) && (bc == n || bc == 1),
        "cannot broadcast {br}x{bc} onto {m}x{n}"
    );
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        let bi = if br == 1 { 0 } else { i };
        for j in 0..n {
            let bj = if bc == 1 { 0 } else { j };
            out[(i, j)] = f(a[(i, j)], b[(bi, bj)]);
        }
    }
    out
}

/// Sums a gradient over the axes along which an operand was broadcast.
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g.clone();
    }
    let (br, bc) = shape;
    let mut out = Matrix::zeros(br, bc);
    for i in 0..g.rows() {
        let oi = if br == 1 { 0 } else { i };
        for j in 0..g.cols() {
            let oj = if bc == 1 { 0 } else { j };
            out[(oi, oj)] += g[(i, j)];
        }
    }
    out
}

/// Vector-Jacobian product of the row-wise lift `v -> (cosh(a r)/a, sinh(a r)/(a r) v)`.
fn lift_backward(x: &Matrix, g: &Matrix, k: Curvature) -> Matrix {
    let alpha = k.sqrt_neg();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let v = x.row(i);
        let gr = g.row(i);
        let (g0, gs) = (gr[0], &gr[1..]);
        let r = dot(v, v).sqrt();
        let theta = alpha * r;
        // f = sinh(theta)/theta, f'(r)/r and sinh(theta)/r, each with a series
        // near zero
        let (f, fp_over_r, sinh_over_r) = if theta < 1e-3 {
            let t2 = theta * theta;
            (
                1.0 + t2 / 6.0 + t2 * t2 / 120.0,
                alpha * alpha * (1.0 / 3.0 + t2 / 30.0 + t2 * t2 / 840.0),
                alpha * (1.0 + t2 / 6.0 + t2 * t2 / 120.0),
            )
        } else {
            let (s, c) = (theta.sinh(), theta.cosh());
            (s / theta, (theta * c - s) / (alpha * r * r * r), s / r)
        };
        let gsv = dot(gs, v);
        let coef = fp_over_r * gsv + g0 * sinh_over_r;
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = f * gs[j] + coef * v[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use rand::{Rng as _, SeedableRng};

    fn random(rng: &mut Rng, r: usize, c: usize, a: f64) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-a..a)).collect()).unwrap()
    }

    /// Central finite-difference check of d(sum(out ⊙ probe))/d(input).
    fn check(input: Matrix, build: impl Fn(&mut Tape, Var) -> Var, tol: f64) {
        let mut rng = Rng::seed_from_u64(99);
        let eval = |x: &Matrix, probe: Option<&Matrix>| -> (f64, Matrix, Option<Matrix>) {
            let mut tape = Tape::new();
            let leaf = tape.leaf(x.clone());
            let out = build(&mut tape, leaf);
            let shape = tape.value(out).shape();
            let probe = probe.cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
            let p = tape.leaf(probe.clone());
            let prod = tape.mul(out, p);
            let ones = tape.leaf(Matrix::filled(1, shape.0, 1.0));
            let rowsum = tape.matmul(ones, prod);
            let ones_c = tape.leaf(Matrix::filled(shape.1, 1, 1.0));
            let total = tape.matmul(rowsum, ones_c);
            let grads = tape.backward(total);
            (
                tape.value(total).as_slice()[0],
                probe,
                grads.get(leaf).cloned(),
            )
        };
        let shape = {
            let mut tape = Tape::new();
            let leaf = tape.leaf(input.clone());
            let out = build(&mut tape, leaf);
            tape.value(out).shape()
        };
        let probe = random(&mut rng, shape.0, shape.1, 1.0);
        let (_, _, grad) = eval(&input, Some(&probe));
        let grad = grad.expect("input must influence output");
        let h = 1e-6;
        for idx in 0..input.len() {
            let mut plus = input.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = input.clone();
            minus.as_mut_slice()[idx] -= h;
            let fd = (eval(&plus, Some(&probe)).0 - eval(&minus, Some(&probe)).0) / (2.0 * h);
            let an = grad.as_slice()[idx];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            assert!(err < tol, "entry {idx}: analytic {an} vs numeric {fd}");
        }
    }

    #[test]
    fn dense_primitives() {
        let mut rng = Rng::seed_from_u64(1);
        let w = random(&mut rng, 4, 3, 1.0);
        let b = random(&mut rng, 1, 4, 1.0);
        let col = random(&mut rng, 5, 1, 1.0);
        check(
            random(&mut rng, 5, 3, 1.0),
            |t, x| {
                let w = t.leaf(w.clone());
                let b = t.leaf(b.clone());
                let c = t.leaf(col.clone());
                let y = t.matmul_bt(x, w);
                let y = t.add(y, b);
                let y = t.mul(y, c);
                let y = t.leaky_relu(y, 0.1);
                let s = t.sigmoid(y);
                let e = t.exp(s);
                let y = t.scale(e, 0.7);
                t.add_scalar(y, 0.3)
            },
            1e-6,
        );
    }

    #[test]
    fn matmul_both_sides() {
        let mut rng = Rng::seed_from_u64(2);
        let a = random(&mut rng, 3, 4, 1.0);
        check(random(&mut rng, 4, 2, 1.0), |t, x| {
            let a = t.leaf(a.clone());
            let y = t.matmul(a, x);
            let z = t.matmul_bt(y, y);
            t.matmul(z, y)
        }, 1e-6);
    }

    #[test]
    fn norms_and_reciprocals() {
        let mut rng = Rng::seed_from_u64(3);
        check(random(&mut rng, 4, 3, 1.0), |t, x| {
            let n = t.row_sum_sq(x);
            let n = t.sqrt(n);
            let r = t.recip(n);
            t.mul(x, r)
        }, 1e-6);
    }

    #[test]
    fn slicing_and_concatenation() {
        let mut rng = Rng::seed_from_u64(4);
        check(random(&mut rng, 3, 5, 1.0), |t, x| {
            let a = t.slice_cols(x, 1, 4);
            let b = t.slice_cols(x, 0, 2);
            let a = t.leaky_relu(a, 0.01);
            t.concat_cols(a, b)
        }, 1e-6);
    }

    #[test]
    fn lorentz_lift_gradient() {
        let mut rng = Rng::seed_from_u64(5);
        let k = Curvature::new(-1.0).unwrap();
        check(random(&mut rng, 4, 3, 1.5), |t, x| t.lorentz_lift(x, k), 1e-6);
        let k2 = Curvature::new(-2.5).unwrap();
        check(random(&mut rng, 3, 3, 0.8), |t, x| t.lorentz_lift(x, k2), 1e-6);
        // tiny rows go through the series branch
        check(random(&mut rng, 2, 3, 1e-4), |t, x| t.lorentz_lift(x, k), 1e-5);
    }

    #[test]
    fn lorentz_time_and_normalize_gradients() {
        let mut rng = Rng::seed_from_u64(6);
        let k = Curvature::new(-1.0).unwrap();
        check(random(&mut rng, 4, 3, 1.0), |t, x| t.lorentz_time(x, k), 1e-6);
        let k3 = Curvature::new(-3.0).unwrap();
        check(random(&mut rng, 4, 3, 1.0), |t, x| {
            let y = t.lorentz_time(x, k3);
            t.lorentz_normalize(y, k3)
        }, 1e-6);
    }

    #[test]
    fn lorentz_distance_gradient() {
        let mut rng = Rng::seed_from_u64(7);
        let k = Curvature::new(-1.0).unwrap();
        check(random(&mut rng, 5, 3, 1.0), |t, x| {
            let y = t.lorentz_lift(x, k);
            t.lorentz_distance(y, k)
        }, 1e-5);
    }

    #[test]
    fn masked_softmax_gradient() {
        let mut rng = Rng::seed_from_u64(8);
        let keep: Vec<bool> = (0..16).map(|i| i % 5 == 0 || i % 3 == 1).collect();
        check(random(&mut rng, 4, 4, 2.0), move |t, x| t.masked_softmax(x, keep.clone()), 1e-6);
    }

    #[test]
    fn topk_mean_and_bce() {
        let mut tape = Tape::new();
        let s = tape.leaf(Matrix::column_vector(vec![0.2, 0.9, 0.4]));
        let m = tape.mean_of_rows(s, vec![1, 2]);
        let l = tape.bce(m, 1.0);
        assert!((tape.value(m).as_slice()[0] - 0.65).abs() < 1e-15);
        let g = tape.backward(l);
        let expected = -1.0 / 0.65 / 2.0;
        let gs = g.get(s).unwrap();
        assert_eq!(gs.as_slice()[0], 0.0);
        assert!((gs.as_slice()[1] - expected).abs() < 1e-12);
        assert!((gs.as_slice()[2] - expected).abs() < 1e-12);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::scalar(2.0));
        let unused = tape.leaf(Matrix::scalar(3.0));
        let b = tape.scale(a, 4.0);
        let g = tape.backward(b);
        assert_eq!(g.get(a).unwrap().as_slice(), &[4.0]);
        assert!(g.get(unused).is_none());
    }
}
