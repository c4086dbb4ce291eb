//! Column-major dense matrices and the small symmetric solves used by every
//! least-squares update.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{shape_err, Error, Result};

/// Dense real matrix stored column-major.
///
/// Column-major storage makes the mode-1 unfolding of a first-index-fastest
/// tensor a plain reinterpretation of its buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from values listed row by row.
    pub fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(shape_err!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            ));
        }
        Ok(Self::from_fn(rows, cols, |i, j| values[i * cols + j]))
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Bytes held by the backing buffer.
    pub fn heap_bytes(&self) -> usize {
        self.data.capacity() * core::mem::size_of::<f64>()
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Copies row `i` into `out` (length `cols`).
    #[inline]
    pub fn copy_row(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.cols) {
            *o = self.data[i + j * self.rows];
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.copy_row(i, &mut out);
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err!(
                "cannot multiply {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other.data[k + j * other.rows];
                if b != 0.0 {
                    axpy(b, self.column(k), dst);
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(shape_err!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        Ok(Matrix::from_fn(self.cols, other.cols, |i, j| {
            dot(self.column(i), other.column(j))
        }))
    }

    /// `selfᵀ · self`, exactly symmetric.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = dot(self.column(i), self.column(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "cannot add {}x{} to {}x{}",
                other.rows,
                other.cols,
                self.rows,
                self.cols
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(shape_err!(
                "cannot stack a {}-column matrix below a {}-column matrix",
                other.cols,
                self.cols
            ));
        }
        let rows = self.rows + other.rows;
        let mut data = Vec::with_capacity(rows * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(self.column(j));
            data.extend_from_slice(other.column(j));
        }
        Ok(Matrix {
            rows,
            cols: self.cols,
            data,
        })
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn row_block(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.rows);
        Matrix::from_fn(len, self.cols, |i, j| self[(start + i, j)])
    }

    pub fn scale_column(&mut self, j: usize, factor: f64) {
        for v in self.column_mut(j) {
            *v *= factor;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// Unrolled dot product; four partial sums keep the loop vectorizable.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gram matrices whose condition estimate exceeds this are regularized.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Ridge weight relative to the Gram trace used by the fallback.
pub const TIKHONOV_SCALE: f64 = 1e-12;

/// Diagnostics attached to a normal-equations solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveInfo {
    /// A ridge term `λI` was added to the Gram matrix.
    pub regularized: bool,
    /// Fewer equations than unknowns (`s < R`).
    pub underdetermined: bool,
}

struct Cholesky {
    n: usize,
    // lower factor, column-major
    l: Vec<f64>,
}

impl Cholesky {
    fn factor(a: &Matrix) -> Option<Self> {
        let n = a.rows;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[j + k * n] * l[j + k * n];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = libm::sqrt(d);
            l[j + j * n] = djj;
            for i in j + 1..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[i + k * n] * l[j + k * n];
                }
                l[i + j * n] = v / djj;
            }
        }
        Some(Self { n, l })
    }

    /// Cheap lower bound on the 2-norm condition number.
    fn condition_estimate(&self) -> f64 {
        let (lo, hi) = (0..self.n)
            .map(|i| self.l[i + i * self.n])
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo) * (hi / lo)
    }

    /// Solves `L Lᵀ x = b` in place.
    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i + k * n] * b[k];
            }
            b[i] = v / self.l[i + i * n];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= self.l[k + i * n] * b[k];
            }
            b[i] = v / self.l[i + i * n];
        }
    }
}

/// Computes `rhs · gram⁻¹` for a symmetric positive (semi)definite `gram`.
///
/// Uses a Cholesky solve. If the factorization fails or its condition
/// estimate exceeds [`CONDITION_LIMIT`], `λI` with
/// `λ = TIKHONOV_SCALE · trace(gram)` is added and the solve repeated; the
/// returned [`SolveInfo`] records that.
pub fn right_solve_spd(rhs: &Matrix, gram: &Matrix) -> Result<(Matrix, SolveInfo)> {
    let r = gram.rows;
    if gram.cols != r || rhs.cols != r {
        return Err(shape_err!(
            "right solve needs an RxR Gram and an mxR right-hand side, got {}x{} and {}x{}",
            gram.rows,
            gram.cols,
            rhs.rows,
            rhs.cols
        ));
    }
    let mut info = SolveInfo::default();
    let chol = match Cholesky::factor(gram) {
        Some(c) if c.condition_estimate() <= CONDITION_LIMIT => c,
        _ => {
            info.regularized = true;
            let lambda = (TIKHONOV_SCALE * gram.trace()).max(f64::MIN_POSITIVE);
            let mut ridge = gram.clone();
            for i in 0..r {
                ridge[(i, i)] += lambda;
            }
            Cholesky::factor(&ridge).ok_or(Error::SingularSystem)?
        }
    };
    let mut out = Matrix::zeros(rhs.rows, r);
    let mut buf = vec![0.0; r];
    for i in 0..rhs.rows {
        rhs.copy_row(i, &mut buf);
        chol.solve_in_place(&mut buf);
        for (j, v) in buf.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok((out, info))
}
