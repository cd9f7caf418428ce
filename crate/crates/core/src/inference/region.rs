//! Confidence region for the bias parameter `τ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::chisq::chi_sq_quantile;
use crate::linalg;

/// Number of grid points for a scalar `τ`.
pub const SCALAR_GRID: usize = 100;

/// `(τ̂ − τ*)' (Ψ̂Ω̂Ψ̂')^{-1} (τ̂ − τ*)`.
pub fn delta_n(tau_hat: &DVector<f64>, tau_star: &DVector<f64>, tau_cov: &DMatrix<f64>) -> Result<f64> {
    let diff = tau_hat - tau_star;
    Ok(diff.dot(&linalg::spd_solve_vec(tau_cov, &diff, "tau covariance")?))
}

/// Radius `sqrt(χ²_q(1 − δ))` and lower Cholesky factor of the covariance.
pub(crate) fn ellipsoid(tau_cov: &DMatrix<f64>, delta: f64) -> Result<(f64, DMatrix<f64>)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange(format!("delta = {delta}")));
    }
    let q = tau_cov.nrows();
    if q == 0 || tau_cov.ncols() != q {
        return Err(Error::Dimension("tau covariance must be square and nonempty".into()));
    }
    linalg::spd_inverse(tau_cov, "tau covariance")?;
    let chol = tau_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Rank("tau covariance is not positive definite".into()))?;
    Ok((chi_sq_quantile(q, 1.0 - delta)?.sqrt(), chol.l()))
}

/// Radical-inverse (Halton) coordinate of `i` in base `b`.
fn radical_inverse(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Up to `count` quasi-random points in the unit ball of dimension `q`,
/// from a Halton sequence on `[-1, 1]^q` with points outside the ball
/// discarded.
pub(crate) fn halton_ball(q: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(q <= PRIMES.len(), "dimension too large for the Halton bases");
    let mut out = Vec::with_capacity(count);
    let mut i = 1;
    let max_tries = count.saturating_mul(1 << q.min(20)).max(1000);
    while out.len() < count && i < max_tries {
        let s = DVector::from_fn(q, |k, _| 2.0 * radical_inverse(i, PRIMES[k]) - 1.0);
        if s.norm_squared() <= 1.0 {
            out.push(s);
        }
        i += 1;
    }
    out
}

/// Points of `{τ*: Δ_n(τ̂, τ*) ≤ χ²_q(1 − δ)}`.
///
/// For scalar `τ` this is an evenly spaced grid of 100 values between the
/// endpoints. Otherwise it returns starting points for a search: `τ̂`, the
/// endpoints of the ellipsoid axes and `budget` quasi-random interior points.
pub fn tau_region(
    tau_hat: &DVector<f64>,
    tau_cov: &DMatrix<f64>,
    delta: f64,
    budget: usize,
) -> Result<Vec<DVector<f64>>> {
    let q = tau_hat.len();
    if tau_cov.nrows() != q {
        return Err(Error::Dimension(format!("tau has length {q}, covariance is {}x{}", tau_cov.nrows(), tau_cov.ncols())));
    }
    let (radius, l) = ellipsoid(tau_cov, delta)?;
    if q == 1 {
        let half = radius * tau_cov[(0, 0)].sqrt();
        let (lo, hi) = (tau_hat[0] - half, tau_hat[0] + half);
        return Ok((0..SCALAR_GRID)
            .map(|i| {
                let t = i as f64 / (SCALAR_GRID - 1) as f64;
                let v = if i == SCALAR_GRID - 1 { hi } else { lo + t * (hi - lo) };
                DVector::from_element(1, v)
            })
            .collect());
    }
    let mut pts = vec![tau_hat.clone()];
    // principal axes of the ellipsoid
    let eig = linalg::symmetrize(tau_cov).symmetric_eigen();
    for k in 0..q {
        let axis = eig.eigenvectors.column(k) * (radius * eig.eigenvalues[k].max(0.0).sqrt());
        pts.push(tau_hat + &axis);
        pts.push(tau_hat - &axis);
    }
    for s in halton_ball(q, budget) {
        pts.push(tau_hat + &l * s * radius);
    }
    Ok(pts)
}
