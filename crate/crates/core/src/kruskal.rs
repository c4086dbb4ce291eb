//! Kruskal (CP) models, the fitness metric, and row sampling of unfoldings
//! and Khatri-Rao products.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::tensor::{decode_into, DenseTensor, ModeLayout};

/// Rank-R CP model: one `I_n × R` loading matrix per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalModel {
    rank: usize,
    factors: Vec<Matrix>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(arg_err!("a CP model needs at least 2 factors"));
        }
        let rank = factors[0].cols();
        if rank == 0 {
            return Err(arg_err!("rank must be positive"));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.cols() != rank {
                return Err(shape_err!(
                    "factor {n} has {} columns, expected {rank}",
                    f.cols()
                ));
            }
            if f.rows() == 0 {
                return Err(shape_err!("factor {n} has no rows"));
            }
            if !f.is_finite() {
                return Err(arg_err!("factor {n} has non-finite entries"));
            }
        }
        Ok(Self { rank, factors })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    pub(crate) fn set_factor(&mut self, mode: usize, factor: Matrix) {
        debug_assert_eq!(factor.cols(), self.rank);
        self.factors[mode] = factor;
    }

    /// Row counts of the factors.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        let own = self.dims();
        if own != dims {
            return Err(shape_err!("model dims {:?} vs tensor dims {:?}", own, dims));
        }
        Ok(())
    }

    /// The full tensor `Σ_r u^(1)_r ∘ … ∘ u^(N)_r`.
    pub fn reconstruct(&self) -> DenseTensor {
        let dims = self.dims();
        let mut data = Vec::with_capacity(dims.iter().product());
        self.for_each_column(|col| data.extend_from_slice(col));
        DenseTensor::new(dims, data).expect("factor shapes define valid dims")
    }

    /// `‖X − X̂‖_F` without materializing `X̂`.
    pub fn residual_norm(&self, x: &DenseTensor) -> Result<f64> {
        self.check_dims(x.dims())?;
        let extent = self.factors[0].rows();
        let data = x.data();
        let mut ss = 0.0;
        let mut j = 0;
        self.for_each_column(|col| {
            let xs = &data[j * extent..(j + 1) * extent];
            ss += col
                .iter()
                .zip(xs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            j += 1;
        });
        Ok(libm::sqrt(ss))
    }

    /// `1 − ‖X̂ − X‖ / ‖X‖` for this model against `x`.
    pub fn fitness(&self, x: &DenseTensor) -> Result<f64> {
        let norm = x.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(1.0 - self.residual_norm(x)? / norm)
    }

    /// Calls `f` with each column of the mode-1 unfolding of `X̂`, in order.
    fn for_each_column(&self, mut f: impl FnMut(&[f64])) {
        let first = &self.factors[0];
        let rest = &self.factors[1..];
        let rest_dims: Vec<usize> = rest.iter().map(Matrix::rows).collect();
        let columns: usize = rest_dims.iter().product();
        let mut idx = vec![0usize; rest.len()];
        let mut z = vec![0.0; self.rank];
        let mut col = vec![0.0; first.rows()];
        for _ in 0..columns {
            hadamard_rows(rest, &idx, &mut z);
            col.iter_mut().for_each(|v| *v = 0.0);
            for (r, &zr) in z.iter().enumerate() {
                axpy(zr, first.column(r), &mut col);
            }
            f(&col);
            crate::tensor::advance(&mut idx, &rest_dims);
        }
    }
}

/// `out = ⊛_k factors[k](rows[k], :)`, multiplied from the highest mode
/// down so the arithmetic matches a Khatri-Rao fold in descending order.
#[inline]
fn hadamard_rows(factors: &[Matrix], rows: &[usize], out: &mut [f64]) {
    let last = factors.len() - 1;
    factors[last].copy_row(rows[last], out);
    for k in (0..last).rev() {
        let f = &factors[k];
        let i = rows[k];
        for (r, o) in out.iter_mut().enumerate() {
            *o *= f[(i, r)];
        }
    }
}

/// `1 − ‖x̂ − x‖ / ‖x‖`.
pub fn fitness(x: &DenseTensor, x_hat: &DenseTensor) -> Result<f64> {
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(1.0 - x_hat.distance(x)? / norm)
}

/// Sampled columns of a mode-n unfolding together with their decoded
/// per-mode indices. Duplicates are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleIndexSet {
    mode: usize,
    dims: Vec<usize>,
    columns: Vec<usize>,
    // row-major, N-1 entries per sample
    decoded: Vec<usize>,
}

impl SampleIndexSet {
    /// Builds a set from explicit column indices of the mode-`mode`
    /// unfolding of a tensor with extents `dims`.
    pub fn from_columns(dims: &[usize], mode: usize, columns: Vec<usize>) -> Result<Self> {
        let layout = ModeLayout::new(dims, mode)?;
        let bound = layout.codomain();
        if let Some(&bad) = columns.iter().find(|&&j| j >= bound) {
            return Err(Error::IndexOutOfRange { index: bad, bound });
        }
        let width = dims.len() - 1;
        let mut decoded = vec![0usize; columns.len() * width];
        for (c, &j) in columns.iter().enumerate() {
            decode_into(j, dims, mode, &mut decoded[c * width..(c + 1) * width]);
        }
        Ok(Self {
            mode,
            dims: dims.to_vec(),
            columns,
            decoded,
        })
    }

    /// Every column of the unfolding, in order.
    pub fn exhaustive(dims: &[usize], mode: usize) -> Result<Self> {
        let n = ModeLayout::new(dims, mode)?.codomain();
        Self::from_columns(dims, mode, (0..n).collect())
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Indices on every mode but `mode()`, ascending, for sample `c`.
    pub fn decoded(&self, c: usize) -> &[usize] {
        let w = self.dims.len() - 1;
        &self.decoded[c * w..(c + 1) * w]
    }
}

/// Draws `count` columns uniformly with replacement from the mode-`mode`
/// unfolding of a tensor with extents `dims`.
pub fn draw_samples<R: Rng + ?Sized>(
    dims: &[usize],
    mode: usize,
    count: usize,
    rng: &mut R,
) -> Result<SampleIndexSet> {
    if count == 0 {
        return Err(arg_err!("sample count must be positive"));
    }
    let n = ModeLayout::new(dims, mode)?.codomain();
    let columns = (0..count).map(|_| rng.random_range(0..n)).collect();
    SampleIndexSet::from_columns(dims, mode, columns)
}

/// Supplies the column index sets used by the sampled solvers.
///
/// Any [`Rng`] samples uniformly via [`draw_samples`]; [`Exhaustive`] and
/// [`Replay`] make the sampled code paths deterministic for testing.
pub trait SampleSource {
    fn draw(&mut self, dims: &[usize], mode: usize, count: usize) -> Result<SampleIndexSet>;
}

impl<R: Rng + ?Sized> SampleSource for R {
    fn draw(&mut self, dims: &[usize], mode: usize, count: usize) -> Result<SampleIndexSet> {
        draw_samples(dims, mode, count, self)
    }
}

/// Ignores the requested count and returns every column in order.
#[derive(Clone, Copy, Debug, Default)]
pub struct Exhaustive;

impl SampleSource for Exhaustive {
    fn draw(&mut self, dims: &[usize], mode: usize, _count: usize) -> Result<SampleIndexSet> {
        SampleIndexSet::exhaustive(dims, mode)
    }
}

/// Hands out previously recorded index sets in order.
#[derive(Clone, Debug, Default)]
pub struct Replay {
    sets: VecDeque<SampleIndexSet>,
}

impl Replay {
    pub fn new(sets: impl IntoIterator<Item = SampleIndexSet>) -> Self {
        Self {
            sets: sets.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.sets.len()
    }
}

impl SampleSource for Replay {
    fn draw(&mut self, dims: &[usize], mode: usize, _count: usize) -> Result<SampleIndexSet> {
        let set = self
            .sets
            .pop_front()
            .ok_or_else(|| arg_err!("replay exhausted"))?;
        if set.mode != mode || set.dims != dims {
            return Err(shape_err!(
                "replayed set is for mode {} of {:?}, requested mode {mode} of {:?}",
                set.mode,
                set.dims,
                dims
            ));
        }
        Ok(set)
    }
}

/// Wraps a source and keeps a copy of every set it hands out.
#[derive(Debug)]
pub struct Recording<S> {
    inner: S,
    log: Vec<SampleIndexSet>,
}

impl<S: SampleSource> Recording<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[SampleIndexSet] {
        &self.log
    }

    pub fn into_log(self) -> Vec<SampleIndexSet> {
        self.log
    }
}

impl<S: SampleSource> SampleSource for Recording<S> {
    fn draw(&mut self, dims: &[usize], mode: usize, count: usize) -> Result<SampleIndexSet> {
        let set = self.inner.draw(dims, mode, count)?;
        self.log.push(set.clone());
        Ok(set)
    }
}

/// Columns `idx` of the mode-n unfolding of `t` (`I_n × s`).
pub fn sample_unfolding(t: &DenseTensor, idx: &SampleIndexSet) -> Result<Matrix> {
    if t.dims() != idx.dims() {
        return Err(shape_err!(
            "index set drawn for dims {:?}, tensor has {:?}",
            idx.dims(),
            t.dims()
        ));
    }
    let layout = ModeLayout::new(t.dims(), idx.mode)?;
    let data = t.data();
    let mut out = Vec::with_capacity(layout.extent * idx.len());
    for &j in &idx.columns {
        let base = layout.column_base(j);
        out.extend((0..layout.extent).map(|i| data[base + i * layout.left]));
    }
    Matrix::from_col_major(layout.extent, idx.len(), out)
}

/// Rows `idx` of the Khatri-Rao product of `factors`, built from Hadamard
/// products of factor rows without forming the full product.
///
/// `factors` holds the `N-1` loading matrices of every mode except
/// `idx.mode()`, in ascending mode order. Row `c` equals row
/// `idx.columns()[c]` of `U^(N) ⊙ … ⊙ U^(n+1) ⊙ U^(n-1) ⊙ … ⊙ U^(1)`.
pub fn sampled_khatri_rao(idx: &SampleIndexSet, factors: &[&Matrix]) -> Result<Matrix> {
    let width = idx.dims.len() - 1;
    if factors.len() != width {
        return Err(shape_err!(
            "expected {width} factors for a mode-{} sample, got {}",
            idx.mode,
            factors.len()
        ));
    }
    let rank = factors[0].cols();
    let other_dims = idx
        .dims
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != idx.mode)
        .map(|(_, &d)| d);
    for (k, (f, d)) in factors.iter().zip(other_dims).enumerate() {
        if f.cols() != rank {
            return Err(shape_err!("factor {k} has {} columns, expected {rank}", f.cols()));
        }
        if f.rows() != d {
            return Err(Error::IndexOutOfRange {
                index: d - 1,
                bound: f.rows(),
            });
        }
    }
    let s = idx.len();
    let mut out = Matrix::zeros(s, rank);
    let mut row = vec![0.0; rank];
    for c in 0..s {
        let rows = idx.decoded(c);
        factors[width - 1].copy_row(rows[width - 1], &mut row);
        for k in (0..width - 1).rev() {
            let f = factors[k];
            let i = rows[k];
            for (r, v) in row.iter_mut().enumerate() {
                *v *= f[(i, r)];
            }
        }
        for (r, v) in row.iter().enumerate() {
            out[(c, r)] = *v;
        }
    }
    Ok(out)
}
