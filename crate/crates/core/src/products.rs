//! Khatri-Rao and Hadamard products of factor matrices.

use alloc::vec::Vec;

use crate::error::{arg_err, shape_err, Result};
use crate::linalg::Matrix;

/// Column-wise Kronecker product of an `M×R` and a `P×R` matrix.
///
/// Row `p + m·P` of the result is `a(m,:) ⊛ b(p,:)`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(shape_err!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        ));
    }
    let (m, p) = (a.rows(), b.rows());
    let mut data = Vec::with_capacity(m * p * a.cols());
    for r in 0..a.cols() {
        let bc = b.column(r);
        for &av in a.column(r) {
            data.extend(bc.iter().map(|&bv| av * bv));
        }
    }
    Matrix::from_col_major(m * p, a.cols(), data)
}

/// Left fold of [`khatri_rao`] over `ms` in the given order.
pub fn khatri_rao_list(ms: &[&Matrix]) -> Result<Matrix> {
    let (first, rest) = ms
        .split_first()
        .ok_or_else(|| arg_err!("Khatri-Rao of an empty list"))?;
    let mut acc = (*first).clone();
    for m in rest {
        acc = khatri_rao(&acc, m)?;
    }
    Ok(acc)
}

/// Khatri-Rao product of every factor but `skip`, in descending mode order
/// (`U^(N) ⊙ … ⊙ U^(n+1) ⊙ U^(n-1) ⊙ … ⊙ U^(1)`), so its rows line up with
/// the columns of the mode-`skip` unfolding.
pub fn khatri_rao_excluding(factors: &[Matrix], skip: usize) -> Result<Matrix> {
    let list: Vec<&Matrix> = factors
        .iter()
        .enumerate()
        .rev()
        .filter(|&(k, _)| k != skip)
        .map(|(_, m)| m)
        .collect();
    khatri_rao_list(&list)
}

/// Elementwise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "Hadamard needs equal shapes, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Matrix::from_col_major(a.rows(), a.cols(), data)
}

/// `Zᵀ Z` for the Khatri-Rao product `Z` of every factor but `skip`,
/// computed as the Hadamard product of the factor Grams.
pub fn gram_hadamard(grams: &[Matrix], skip: usize) -> Result<Matrix> {
    let r = grams
        .first()
        .map(|g| g.rows())
        .ok_or_else(|| arg_err!("no Gram matrices"))?;
    let mut acc = Matrix::filled(r, r, 1.0);
    for (k, g) in grams.iter().enumerate().rev() {
        if k != skip {
            acc = hadamard(&acc, g)?;
        }
    }
    Ok(acc)
}
