//! Dense row-major matrices, vector normalization, seeded randomness and the
//! central-difference gradient checker.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Default epsilon guarding normalization of (near) zero vectors.
pub const NORM_EPS: f64 = 1e-12;
/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitude below which relative errors are measured against this floor.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Seeded generator used for every stochastic operation.
///
/// ChaCha8 is counter based, so a seed yields the same stream on every
/// platform, and independent sub-streams are selected with [`derived_rng`].
pub type SeedRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn derived_rng(seed: u64, stream: u64) -> SeedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Length {
                what: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Length {
                    what: "matrix row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Entries drawn i.i.d. from N(0, scale²).
    pub fn random_normal(rows: usize, cols: usize, scale: T, rng: &mut SeedRng) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z) * scale
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Standard product `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(self.shape_error("matmul", rhs));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(self.shape_error("matmul_t", rhs));
        }
        Ok(Self::from_fn(self.rows, rhs.rows, |i, j| {
            dot(self.row(i), rhs.row(j))
        }))
    }

    /// `selfᵀ · rhs`
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(self.shape_error("t_matmul", rhs));
        }
        let mut out = Self::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(rhs.row(r)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(self.shape_error("add_scaled", other));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|a| *a = T::zero());
    }

    pub fn frobenius_sq(&self) -> T {
        dot(&self.data, &self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Mean of each column.
    pub fn column_mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        for row in self.row_iter() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = T::from_count(self.rows.max(1));
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    fn shape_error(&self, op: &'static str, rhs: &Self) -> Error {
        Error::Shape {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: rhs.rows,
            right_cols: rhs.cols,
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list()
            .entries((0..self.rows).map(|i| &self.data[i * self.cols..(i + 1) * self.cols]))
            .finish()
    }
}

/// Returns `v / ‖v‖`, or `v` unchanged when `‖v‖ <= eps`.
pub fn l2_normalize<T: Scalar>(v: &[T], eps: T) -> Vec<T> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out, eps);
    out
}

/// In-place [`l2_normalize`]; returns the norm of the input.
pub fn l2_normalize_in_place<T: Scalar>(v: &mut [T], eps: T) -> T {
    let norm = dot(v, v).sqrt();
    if norm > eps {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Backward of `y = v/‖v‖` given the forward output `y`, the input norm and
/// the upstream gradient; identity when the normalization was skipped.
pub fn l2_normalize_backward<T: Scalar>(y: &[T], norm: T, eps: T, upstream: &[T]) -> Vec<T> {
    if norm <= eps {
        return upstream.to_vec();
    }
    let proj = dot(y, upstream);
    y.iter()
        .zip(upstream)
        .map(|(&yi, &gi)| (gi - yi * proj) / norm)
        .collect()
}

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` of a scalar function.
pub fn finite_diff_grad<T, F>(mut f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let mut probe = x.to_vec();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        if !plus.is_finite() {
            return Err(Error::NonFiniteEval { coord: i, sign: '+' });
        }
        probe[i] = x[i] - h;
        let minus = f(&probe);
        if !minus.is_finite() {
            return Err(Error::NonFiniteEval { coord: i, sign: '-' });
        }
        probe[i] = x[i];
        grad.push((plus - minus) / two_h);
    }
    Ok(grad)
}

/// Worst-case agreement between an analytic and a numerical gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub num_params_checked: usize,
    pub worst_index: usize,
}

impl GradCheckReport {
    /// Per-coordinate relative error `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
    pub fn compare<T: Scalar>(analytic: &[T], numeric: &[T]) -> Result<Self> {
        if analytic.len() != numeric.len() {
            return Err(Error::Length {
                what: "numeric gradient",
                expected: analytic.len(),
                actual: numeric.len(),
            });
        }
        if analytic.is_empty() {
            return Err(Error::InvalidArgument("empty gradient".into()));
        }
        let mut report = Self {
            max_abs_err: 0.0,
            max_rel_err: 0.0,
            num_params_checked: analytic.len(),
            worst_index: 0,
        };
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let (a, n) = (a.as_f64(), n.as_f64());
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(REL_ERR_FLOOR);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || !rel.is_finite() {
                report.max_rel_err = rel;
                report.worst_index = i;
            }
        }
        Ok(report)
    }

    /// Combines two reports, keeping the worst errors; indices of `other` are
    /// offset by the parameters already counted in `self`.
    pub fn merge(self, other: Self) -> Self {
        let (max_rel_err, worst_index) = if other.max_rel_err > self.max_rel_err {
            (other.max_rel_err, self.num_params_checked + other.worst_index)
        } else {
            (self.max_rel_err, self.worst_index)
        };
        Self {
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
            max_rel_err,
            num_params_checked: self.num_params_checked + other.num_params_checked,
            worst_index,
        }
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_abs_err={:.3e} max_rel_err={:.3e} params={} worst_index={}",
            self.max_abs_err, self.max_rel_err, self.num_params_checked, self.worst_index
        )
    }
}

/// Finite-difference check of `analytic` against `f` at `x`.
pub fn check_gradient<T, F>(f: F, x: &[T], analytic: &[T], h: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let numeric = finite_diff_grad(f, x, h)?;
    GradCheckReport::compare(analytic, &numeric)
}
