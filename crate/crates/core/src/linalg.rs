//! Dense helpers shared by the structured tests, the oracles and the estimators.

use nalgebra::{Cholesky, ComplexField, DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values<T>(m: &DMatrix<T>) -> Vec<f64>
where
    T: ComplexField<RealField = f64>,
{
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Rank under the policy `sigma <= rel_tol * max(sigma_max, scale_floor)` counts as zero.
pub fn rank_from_singular_values(sv: &[f64], rel_tol: f64, scale_floor: f64) -> usize {
    let scale = sv.first().copied().unwrap_or(0.0).max(scale_floor);
    sv.iter().filter(|&&s| s > rel_tol * scale).count()
}

pub fn numerical_rank<T>(m: &DMatrix<T>, rel_tol: f64) -> usize
where
    T: ComplexField<RealField = f64>,
{
    rank_from_singular_values(&singular_values(m), rel_tol, 0.0)
}

/// `sigma_max / sigma_min`, infinite for a singular or empty-rank matrix.
pub fn condition_number<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    let sv = singular_values(m);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Orthonormal basis of the numerical null space of `m`, together with the
/// singular values of `m` (descending, padded to `ncols`).
///
/// A right singular direction belongs to the null space when its singular
/// value is at most `rel_tol * max(sigma_max, scale_floor)`.
pub fn null_space(m: &CMatrix, rel_tol: f64, scale_floor: f64) -> (CMatrix, Vec<f64>) {
    let n = m.ncols();
    if n == 0 {
        return (CMatrix::zeros(0, 0), Vec::new());
    }
    // Pad wide matrices with zero rows so the SVD yields a full set of right vectors.
    let work = if m.nrows() < n {
        let mut p = CMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let scale = sv[0].max(scale_floor);
    let null_idx: Vec<usize> = order
        .iter()
        .zip(&sv)
        .filter(|(_, &s)| s <= rel_tol * scale)
        .map(|(&k, _)| k)
        .collect();
    let mut basis = CMatrix::zeros(n, null_idx.len());
    for (c, &k) in null_idx.iter().enumerate() {
        for r in 0..n {
            basis[(r, c)] = v_t[(k, r)].conj();
        }
    }
    (basis, sv)
}

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(sym))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric inverse square root via eigendecomposition. Eigenvalues at or
/// below `floor` are an error, never regularized.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| l <= floor) {
        return Err(Error::Singular("symmetric inverse square root"));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Symmetric square root of a PSD matrix, clipping tiny negative eigenvalues.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite(what))
}

pub fn inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    m.clone().try_inverse().ok_or(Error::Singular(what))
}

/// Solves `m * X = rhs` by LU.
pub fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    m.clone().lu().solve(rhs).ok_or(Error::Singular(what))
}

/// Largest singular value (spectral norm).
pub fn norm2<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    singular_values(m).first().copied().unwrap_or(0.0)
}
