//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra` dynamic matrices. Systems that arise
//! in this crate are tiny (at most a few dozen columns) so clarity wins over
//! blocking or BLAS calls.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance applied to singular values and Cholesky pivots.
pub const RANK_TOL: f64 = 1e-10;

/// Fails unless `m` has full column rank, judged on singular values relative
/// to the largest one.
pub fn check_full_column_rank(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.ncols() == 0 {
        return Ok(());
    }
    if m.nrows() < m.ncols() {
        return Err(Error::Rank(format!(
            "{what}: {} rows cannot support {} columns",
            m.nrows(),
            m.ncols()
        )));
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= RANK_TOL * max {
        return Err(Error::Rank(format!(
            "{what}: smallest singular value {min:.3e} vs largest {max:.3e}"
        )));
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive definite matrix, rejecting
/// near-singular input.
fn spd_cholesky(a: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = a.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) {
        return Err(Error::Rank(format!("{what}: zero matrix")));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank(format!("{what}: not positive definite")))?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    if min_pivot <= RANK_TOL * max_diag {
        return Err(Error::Rank(format!(
            "{what}: pivot {min_pivot:.3e} below tolerance (scale {max_diag:.3e})"
        )));
    }
    Ok(chol)
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_cholesky(a, what)?.solve(b))
}

pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(spd_cholesky(a, what)?.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(spd_cholesky(a, what)?.inverse())
}

/// Moore–Penrose inverse of a symmetric matrix via its eigendecomposition.
/// Eigenvalues below `RANK_TOL` times the largest magnitude are dropped.
pub fn pinv_symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.nrows();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(a).symmetric_eigen();
    let max = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    let mut out = DMatrix::zeros(k, k);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > RANK_TOL * max && lam.abs() > 0.0 {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

/// `(a + a') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Horizontal concatenation `[a | b]`. Either side may have zero columns.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hcat row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Columns of `m` listed in `idx`, in that order.
pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Principal submatrix with rows and columns listed in `idx`.
pub fn select_square(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}
