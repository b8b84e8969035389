//! Dense row-major `f64` matrices, activations, Xavier initialization, and a
//! central-finite-difference gradient oracle.
//!
//! Everything downstream (forward passes, hand-derived gradients, code
//! packing) is built on this module, so the operations here are kept small,
//! deterministic, and easy to check against brute-force references. Matrix
//! products accumulate along the inner dimension in ascending index order,
//! independent of thread count, which keeps results bit-reproducible.

use rand::Rng;
use rand::distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::parallel;

/// Dense row-major matrix. Entries are finite by construction: validated
/// constructors reject NaN/Inf, and the training loop re-checks gradients
/// before every parameter update.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. The length must be `rows * cols`
    /// and every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry in {rows}x{cols} matrix data"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds for {}x{}", self.rows, self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds for {}x{}", self.rows, self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        assert!(r < self.rows, "row {r} out of bounds for {}x{}", self.rows, self.cols);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_to_vec(&self, c: usize) -> Vec<f64> {
        assert!(c < self.cols, "column {c} out of bounds for {}x{}", self.rows, self.cols);
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// Adds `v` into column `c` in place.
    pub fn add_to_col(&mut self, c: usize, v: &[f64]) {
        assert!(c < self.cols, "column {c} out of bounds for {}x{}", self.rows, self.cols);
        assert!(v.len() == self.rows, "vector length {} does not match {} rows", v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.data[r * self.cols + c] += x;
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Matrix product `self * rhs`. Each output entry accumulates along the
    /// inner dimension in ascending order, so the result is identical for
    /// every thread count.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; n * m];
        let work = n * k * m;
        if work >= PAR_MIN_WORK && parallel::threads() > 1 {
            parallel::pool().install(|| {
                out.par_chunks_mut(m)
                    .zip(self.data.par_chunks(k))
                    .for_each(|(orow, arow)| matmul_row(orow, arow, &rhs.data, m));
            });
        } else {
            for (orow, arow) in out.chunks_mut(m).zip(self.data.chunks(k)) {
                matmul_row(orow, arow, &rhs.data, m);
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    /// Adds `bias` to every column (`bias` has one entry per row).
    pub fn add_col_broadcast(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.rows {
            return Err(Error::Shape(format!(
                "bias length {} does not match {}x{} matrix",
                bias.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = self.clone();
        for (r, &b) in bias.iter().enumerate() {
            for v in &mut out.data[r * self.cols..(r + 1) * self.cols] {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot combine {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().sum())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Below this many multiply-adds a product runs serially; the threshold only
/// affects scheduling, never the result.
const PAR_MIN_WORK: usize = 1 << 21;

fn matmul_row(orow: &mut [f64], arow: &[f64], b: &[f64], m: usize) {
    for (kk, &a) in arow.iter().enumerate() {
        let brow = &b[kk * m..(kk + 1) * m];
        for (o, &bv) in orow.iter_mut().zip(brow) {
            *o += a * bv;
        }
    }
}

/// Layer activations. `derivative` takes the pre-activation input, and the
/// ReLU derivative at exactly zero is defined as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn apply_matrix(self, m: &Matrix) -> Matrix {
        m.map(|v| self.apply(v))
    }

    pub fn derivative_matrix(self, m: &Matrix) -> Matrix {
        m.map(|v| self.derivative(v))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// Numerically stable logistic function; never overflows.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Xavier (Glorot) uniform initialization: entries drawn from
/// `[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]`. Deterministic for a fixed
/// generator state.
pub fn xavier_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!(
            "xavier init needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit)
        .map_err(|e| Error::Config(format!("bad xavier range: {e}")))?;
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Ok(Matrix { rows, cols, data })
}

/// Central-difference gradient of a scalar function: component `k` is
/// `(f(x + h e_k) - f(x - h e_k)) / (2 h)`. This is the oracle the analytic
/// gradients in this crate are checked against; it is exact for polynomials
/// of degree at most two (up to rounding).
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let orig = point[k];
        point[k] = orig + h;
        let fp = f(&point);
        point[k] = orig - h;
        let fm = f(&point);
        point[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "objective returned a non-finite value near component {k}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error with a unit floor: `|a - b| / max(1, |a|, |b|)`. The floor
/// keeps roundoff noise in near-zero components from registering as error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force i-j-k product used as the oracle for `matmul`. The inner
    /// loop accumulates in the same ascending-k order, so agreement is exact.
    fn matmul_reference(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_matches_triple_loop_reference_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.random_range(1..12);
            let k = rng.random_range(1..12);
            let m = rng.random_range(1..12);
            let a = random_matrix(n, k, &mut rng);
            let b = random_matrix(k, m, &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = matmul_reference(&a, &b);
            assert_eq!(got.data(), want.data());
        }
    }

    #[test]
    fn large_matmul_matches_reference_bitwise() {
        // Big enough to cross the parallel threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_matrix(96, 160, &mut rng);
        let b = random_matrix(160, 160, &mut rng);
        let got = a.matmul(&b).unwrap();
        let want = matmul_reference(&a, &b);
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn matmul_identity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(5, 7, &mut rng);
        let eye = Matrix::from_fn(7, 7, |r, c| if r == c { 1.0 } else { 0.0 });
        assert_eq!(a.matmul(&eye).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn transpose_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_matrix(6, 9, &mut rng);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn from_vec_rejects_non_finite_entries() {
        let err = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn row_sums_and_broadcast_are_consistent() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.row_sums(), vec![6.0, 15.0]);
        let shifted = m.add_col_broadcast(&[10.0, 20.0]).unwrap();
        assert_eq!(shifted.row(0), &[11.0, 12.0, 13.0]);
        assert_eq!(shifted.row(1), &[24.0, 25.0, 26.0]);
    }

    #[test]
    fn xavier_entries_always_stay_inside_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for &(r, c) in &[(1, 1), (3, 5), (64, 16), (200, 7)] {
            let limit = (6.0 / (r + c) as f64).sqrt();
            let m = xavier_init(r, c, &mut rng).unwrap();
            assert!(m.data().iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn xavier_sample_variance_matches_uniform_moment() {
        // Var of U[-a, a] is a^2/3 = 2/(rows+cols).
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (r, c) = (500, 500);
        let m = xavier_init(r, c, &mut rng).unwrap();
        let n = (r * c) as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let want = 2.0 / (r + c) as f64;
        assert!((var - want).abs() < 0.2 * want, "var {var}, want {want}");
    }

    #[test]
    fn xavier_is_deterministic_per_seed() {
        let a = xavier_init(8, 8, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let b = xavier_init(8, 8, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        assert_eq!(a, b);
        let c = xavier_init(8, 8, &mut ChaCha8Rng::seed_from_u64(18)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_rejects_zero_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        assert!(matches!(xavier_init(0, 4, &mut rng), Err(Error::Shape(_))));
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let h = 1e-5;
        for act in [
            Activation::Identity,
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
        ] {
            let mut checked = 0;
            while checked < 100_000 {
                let x: f64 = rng.random_range(-4.0..4.0);
                // Keep clear of the ReLU kink: the subgradient there is a
                // convention, not a derivative.
                if act == Activation::Relu && x.abs() < 1e-4 {
                    continue;
                }
                let numeric = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!(
                    rel_err(act.derivative(x), numeric) < 1e-6,
                    "{} at {x}: analytic {} vs numeric {numeric}",
                    act.name(),
                    act.derivative(x)
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let lo = Activation::Sigmoid.apply(-710.0);
        let hi = Activation::Sigmoid.apply(710.0);
        assert!((0.0..1e-300).contains(&lo));
        assert!(hi <= 1.0 && hi > 1.0 - 1e-15);
        assert!(Activation::Sigmoid.derivative(-710.0).is_finite());
    }

    #[test]
    fn finite_diff_is_exact_on_quadratics() {
        // f(x) = x'Qx + b'x + c has gradient (Q + Q')x + b; the central
        // difference has zero truncation error on degree-2 polynomials.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 10;
        let q: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| {
            let mut acc = 3.5;
            for i in 0..d {
                acc += b[i] * x[i];
                for j in 0..d {
                    acc += x[i] * q[i * d + j] * x[j];
                }
            }
            acc
        };
        let grad = finite_diff_grad(f, &theta, 1e-5).unwrap();
        for i in 0..d {
            let mut want = b[i];
            for j in 0..d {
                want += (q[i * d + j] + q[j * d + i]) * theta[j];
            }
            assert!((grad[i] - want).abs() < 1e-8, "component {i}: {} vs {want}", grad[i]);
        }
    }

    #[test]
    fn finite_diff_of_a_constant_is_zero() {
        let grad = finite_diff_grad(|_| 42.0, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!(grad.iter().all(|&g| g.abs() < 1e-10));
    }

    #[test]
    fn finite_diff_propagates_non_finite_values() {
        let err = finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-5);
        assert!(err.is_ok(), "1/h is finite");
        let err = finite_diff_grad(|_| f64::NAN, &[1.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        assert!(finite_diff_grad(|_| 0.0, &[1.0], 0.0).is_err());
        assert!(finite_diff_grad(|_| 0.0, &[1.0], -1e-3).is_err());
    }
}
