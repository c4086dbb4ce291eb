//! Dense N-way tensors stored first-index-fastest, plus mode-n unfolding.
//!
//! Element `(i_1, …, i_N)` (0-based) lives at flat offset
//! `Σ_k i_k · ∏_{m<k} I_m`. The mode-n unfolding `X_(n)` is the
//! `I_n × ∏_{k≠n} I_k` matrix whose column index is
//! `j = Σ_{k≠n} i_k · J_k` with `J_k = ∏_{m<k, m≠n} I_m`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::linalg::{axpy, dot, Matrix};

/// N-way dense array of `f64`, first index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// A slab of new slices on the last mode.
pub type StreamBatch = DenseTensor;

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.len() < 2 {
        return Err(arg_err!("a tensor needs at least 2 modes, got {}", dims.len()));
    }
    if let Some(k) = dims.iter().position(|&d| d == 0) {
        return Err(arg_err!("extent of mode {k} is zero"));
    }
    Ok(dims.iter().product())
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if data.len() != len {
            return Err(shape_err!(
                "dims {:?} need {len} values, got {}",
                dims,
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Fills the tensor by calling `f` with each 0-based multi-index in
    /// storage order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_dims(dims)?;
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            advance(&mut idx, dims);
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Extent of the last (temporal) mode.
    pub fn last_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    /// Extents of every mode but the last.
    pub fn head_dims(&self) -> &[usize] {
        &self.dims[..self.dims.len() - 1]
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(shape_err!(
                "multi-index of length {} for an order-{} tensor",
                index.len(),
                self.dims.len()
            ));
        }
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.dims) {
            if i >= d {
                return Err(Error::IndexOutOfRange { index: i, bound: d });
            }
            off += i * stride;
            stride *= d;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    /// `sqrt(Σ x²)`.
    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &DenseTensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(shape_err!("dims {:?} vs {:?}", self.dims, other.dims));
        }
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(libm::sqrt(ss))
    }

    /// Mode-n unfolding `X_(n)` (`I_n × ∏_{k≠n} I_k`).
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        let layout = ModeLayout::new(&self.dims, mode)?;
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..layout.codomain() {
            let base = layout.column_base(j);
            out.extend((0..layout.extent).map(|i| self.data[base + i * layout.left]));
        }
        Matrix::from_col_major(layout.extent, layout.codomain(), out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, mode: usize, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        let layout = ModeLayout::new(dims, mode)?;
        if m.shape() != (layout.extent, layout.codomain()) {
            return Err(shape_err!(
                "a {}x{} matrix does not unfold dims {:?} along mode {mode}",
                m.rows(),
                m.cols(),
                dims
            ));
        }
        let mut data = vec![0.0; len];
        for j in 0..layout.codomain() {
            let base = layout.column_base(j);
            for (i, v) in m.column(j).iter().enumerate() {
                data[base + i * layout.left] = *v;
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Matricized-tensor times Khatri-Rao product: `X_(n) · Z`.
    ///
    /// `z` has one row per column of `X_(n)`; the unfolding is never
    /// materialized.
    pub fn mttkrp(&self, z: &Matrix, mode: usize) -> Result<Matrix> {
        let layout = ModeLayout::new(&self.dims, mode)?;
        if z.rows() != layout.codomain() {
            return Err(shape_err!(
                "mode-{mode} unfolding has {} columns but the factor product has {} rows",
                layout.codomain(),
                z.rows()
            ));
        }
        let rank = z.cols();
        let extent = layout.extent;
        let left = layout.left;
        let mut out = Matrix::zeros(extent, rank);
        if left == 1 {
            for j in 0..layout.codomain() {
                let col = &self.data[j * extent..(j + 1) * extent];
                for r in 0..rank {
                    let zr = z[(j, r)];
                    if zr != 0.0 {
                        axpy(zr, col, out.column_mut(r));
                    }
                }
            }
            return Ok(out);
        }
        let mut acc = vec![0.0; rank];
        for right in 0..layout.right {
            let block = &self.data[right * left * extent..(right + 1) * left * extent];
            for (i, fiber) in block.chunks_exact(left).enumerate() {
                for (r, a) in acc.iter_mut().enumerate() {
                    let zc = &z.column(r)[right * left..(right + 1) * left];
                    *a = dot(fiber, zc);
                }
                for (r, a) in acc.iter().enumerate() {
                    out[(i, r)] += a;
                }
            }
        }
        Ok(out)
    }

    /// Slices `start..start + len` of the last mode.
    pub fn slab(&self, start: usize, len: usize) -> Result<Self> {
        let last = self.last_dim();
        if len == 0 || start + len > last {
            return Err(arg_err!(
                "slab {start}..{} outside last-mode extent {last}",
                start + len
            ));
        }
        let slice: usize = self.head_dims().iter().product();
        let mut dims = self.dims.clone();
        *dims.last_mut().unwrap() = len;
        Ok(Self {
            dims,
            data: self.data[start * slice..(start + len) * slice].to_vec(),
        })
    }

    /// Appends `other`'s slices after this tensor's last-mode slices.
    pub fn append_last(&mut self, other: &DenseTensor) -> Result<()> {
        if self.head_dims() != other.head_dims() {
            return Err(shape_err!(
                "head dims {:?} vs {:?}",
                self.head_dims(),
                other.head_dims()
            ));
        }
        self.data.extend_from_slice(&other.data);
        *self.dims.last_mut().unwrap() += other.last_dim();
        Ok(())
    }
}

/// Advances a 0-based multi-index in first-index-fastest order.
#[inline]
pub(crate) fn advance(idx: &mut [usize], dims: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

/// Strides of one mode inside the first-index-fastest layout.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ModeLayout {
    /// `∏_{k<n} I_k`
    pub left: usize,
    /// `I_n`
    pub extent: usize,
    /// `∏_{k>n} I_k`
    pub right: usize,
}

impl ModeLayout {
    pub fn new(dims: &[usize], mode: usize) -> Result<Self> {
        if mode >= dims.len() {
            return Err(Error::InvalidMode {
                mode,
                order: dims.len(),
            });
        }
        Ok(Self {
            left: dims[..mode].iter().product(),
            extent: dims[mode],
            right: dims[mode + 1..].iter().product(),
        })
    }

    #[inline]
    pub fn codomain(&self) -> usize {
        self.left * self.right
    }

    /// Flat offset of entry `(0, j)` of the unfolding.
    #[inline]
    pub fn column_base(&self, j: usize) -> usize {
        let l = j % self.left;
        let r = j / self.left;
        l + r * self.left * self.extent
    }
}

/// Number of columns of the mode-n unfolding, `∏_{k≠n} I_k`.
pub fn codomain_len(dims: &[usize], mode: usize) -> Result<usize> {
    ModeLayout::new(dims, mode).map(|l| l.codomain())
}

/// Column of the mode-n unfolding holding the entries with the given
/// indices on every other mode.
///
/// `multi_index` lists the 0-based indices of all modes except `mode`, in
/// ascending mode order.
pub fn linear_index(multi_index: &[usize], dims: &[usize], mode: usize) -> Result<usize> {
    if mode >= dims.len() {
        return Err(Error::InvalidMode {
            mode,
            order: dims.len(),
        });
    }
    if multi_index.len() + 1 != dims.len() {
        return Err(shape_err!(
            "expected {} indices, got {}",
            dims.len() - 1,
            multi_index.len()
        ));
    }
    let mut j = 0;
    let mut stride = 1;
    let others = dims.iter().enumerate().filter(|&(k, _)| k != mode);
    for (&i, (_, &d)) in multi_index.iter().zip(others) {
        if i >= d {
            return Err(Error::IndexOutOfRange { index: i, bound: d });
        }
        j += i * stride;
        stride *= d;
    }
    Ok(j)
}

/// Inverse of [`linear_index`].
pub fn decode_index(j: usize, dims: &[usize], mode: usize) -> Result<Vec<usize>> {
    let bound = codomain_len(dims, mode)?;
    if j >= bound {
        return Err(Error::IndexOutOfRange { index: j, bound });
    }
    let mut out = vec![0; dims.len() - 1];
    decode_into(j, dims, mode, &mut out);
    Ok(out)
}

/// Unchecked [`decode_index`] writing into `out` (length `N-1`).
#[inline]
pub(crate) fn decode_into(mut j: usize, dims: &[usize], mode: usize, out: &mut [usize]) {
    let others = dims.iter().enumerate().filter(|&(k, _)| k != mode);
    for (o, (_, &d)) in out.iter_mut().zip(others) {
        *o = j % d;
        j /= d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting(dims: &[usize]) -> DenseTensor {
        let n: usize = dims.iter().product();
        DenseTensor::new(dims.to_vec(), (0..n).map(|v| v as f64).collect()).unwrap()
    }

    /// Enumerates mode-n columns by nested loops over the other modes,
    /// first remaining mode fastest, and returns each column's multi-index.
    fn enumerate_columns(dims: &[usize], mode: usize) -> Vec<Vec<usize>> {
        let others: Vec<usize> = (0..dims.len()).filter(|&k| k != mode).map(|k| dims[k]).collect();
        let total: usize = others.iter().product();
        let mut cols = Vec::with_capacity(total);
        let mut idx = vec![0usize; others.len()];
        for _ in 0..total {
            cols.push(idx.clone());
            for (i, &d) in idx.iter_mut().zip(&others) {
                *i += 1;
                if *i < d {
                    break;
                }
                *i = 0;
            }
        }
        cols
    }

    #[test]
    fn linear_index_examples() {
        let dims = [2, 3, 4];
        assert_eq!(linear_index(&[0, 0], &dims, 0).unwrap(), 0);
        assert_eq!(linear_index(&[2, 3], &dims, 0).unwrap(), 11);
        assert_eq!(linear_index(&[1, 0], &dims, 1).unwrap(), 1);
        let cols = enumerate_columns(&dims, 0);
        assert_eq!(cols[11], vec![2, 3]);
        let cols = enumerate_columns(&dims, 1);
        assert_eq!(cols[1], vec![1, 0]);
    }

    #[test]
    fn linear_index_rejects_bad_input() {
        assert!(matches!(
            linear_index(&[3, 0], &[2, 3, 4], 0),
            Err(Error::IndexOutOfRange { index: 3, bound: 3 })
        ));
        assert!(linear_index(&[0], &[2, 3, 4], 0).is_err());
        assert!(matches!(
            linear_index(&[0, 0], &[2, 3, 4], 3),
            Err(Error::InvalidMode { .. })
        ));
    }

    #[test]
    fn decode_index_examples() {
        assert_eq!(decode_index(0, &[2, 3, 4], 0).unwrap(), vec![0, 0]);
        assert_eq!(decode_index(11, &[2, 3, 4], 0).unwrap(), vec![2, 3]);
        assert_eq!(decode_index(2, &[5, 5], 1).unwrap(), vec![2]);
        assert!(decode_index(12, &[2, 3, 4], 0).is_err());
    }

    #[test]
    fn column_mapping_is_a_bijection() {
        for dims in [vec![3, 4, 5], vec![2, 3], vec![2, 2, 3, 2]] {
            for mode in 0..dims.len() {
                let cols = enumerate_columns(&dims, mode);
                for (j, multi) in cols.iter().enumerate() {
                    assert_eq!(linear_index(multi, &dims, mode).unwrap(), j);
                    assert_eq!(&decode_index(j, &dims, mode).unwrap(), multi);
                }
            }
        }
    }

    #[test]
    fn unfold_matches_enumeration() {
        let dims = [2, 3, 4];
        let t = counting(&dims);
        for mode in 0..3 {
            let m = t.unfold(mode).unwrap();
            let cols = enumerate_columns(&dims, mode);
            assert_eq!(m.cols(), cols.len());
            for (j, multi) in cols.iter().enumerate() {
                for i in 0..dims[mode] {
                    let mut full = multi.clone();
                    full.insert(mode, i);
                    assert_eq!(m[(i, j)], t.get(&full).unwrap());
                }
            }
        }
    }

    #[test]
    fn two_way_mode_one_unfolding_is_the_matrix() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.unfold(0).unwrap();
        assert_eq!(m, Matrix::from_row_major(2, 2, &[1.0, 3.0, 2.0, 4.0]).unwrap());
        assert_eq!(t.unfold(1).unwrap(), m.transpose());
    }

    #[test]
    fn fold_inverts_unfold() {
        for dims in [vec![2, 3], vec![2, 3, 4], vec![2, 2, 2, 3]] {
            let t = counting(&dims);
            for mode in 0..dims.len() {
                let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, &dims).unwrap();
                assert_eq!(back, t);
            }
        }
        let m = Matrix::zeros(3, 3);
        assert!(DenseTensor::fold(&m, 0, &[2, 3, 4]).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(DenseTensor::zeros(&[3, 2]).unwrap().frobenius_norm(), 0.0);
        let t = DenseTensor::new(vec![1, 1], vec![-3.0]).unwrap();
        assert_eq!(t.frobenius_norm(), 3.0);
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.frobenius_norm(), libm::sqrt(30.0));
    }

    #[test]
    fn invalid_tensors_are_rejected() {
        assert!(DenseTensor::new(vec![3], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(counting(&[2, 3]).unfold(2).is_err());
    }

    #[test]
    fn mttkrp_matches_unfold_product() {
        for dims in [vec![3, 4, 5], vec![2, 3, 2, 3], vec![4, 3]] {
            let t = DenseTensor::from_fn(&dims, |ix| {
                ix.iter().enumerate().map(|(k, &i)| libm::cos((i * (k + 2)) as f64)).sum()
            })
            .unwrap();
            for mode in 0..dims.len() {
                let cd = codomain_len(&dims, mode).unwrap();
                let z = Matrix::from_fn(cd, 3, |i, j| libm::sin((i + 3 * j) as f64));
                let fast = t.mttkrp(&z, mode).unwrap();
                let slow = t.unfold(mode).unwrap().matmul(&z).unwrap();
                assert!(fast.max_abs_diff(&slow) < 1e-12);
            }
        }
    }

    #[test]
    fn slab_and_append_partition_the_last_mode() {
        let t = counting(&[2, 3, 5]);
        let mut head = t.slab(0, 2).unwrap();
        let tail = t.slab(2, 3).unwrap();
        assert_eq!(head.dims(), &[2, 3, 2]);
        head.append_last(&tail).unwrap();
        assert_eq!(head, t);
        assert!(t.slab(4, 2).is_err());
    }
}
