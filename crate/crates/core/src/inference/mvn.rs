//! Multivariate normal draws `M_j ~ N(0, Ω)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `J × k` matrix whose rows are independent `N(0, Ω)` draws, from a
/// ChaCha20 stream seeded with `seed`.
pub fn mvn_draws(omega: &DMatrix<f64>, draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    mvn_draws_rng(omega, draws, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn mvn_draws_rng<R: Rng + ?Sized>(omega: &DMatrix<f64>, draws: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let k = omega.nrows();
    if omega.ncols() != k {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let scale = omega.abs().max();
    if !scale.is_finite() {
        return Err(Error::NotPsd("non-finite covariance".into()));
    }
    if (omega - omega.transpose()).abs().max() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd("covariance is not symmetric".into()));
    }
    let l = cholesky_jittered(omega)?;
    let z = DMatrix::from_fn(draws, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(z * l.transpose())
}

/// Lower Cholesky factor, adding `ε I` with `ε` growing up to `1e-8 · tr Ω`
/// when the plain factorization fails.
fn cholesky_jittered(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = omega.nrows();
    let trace = omega.trace();
    if omega.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(k, k));
    }
    if let Some(c) = omega.clone().cholesky() {
        return Ok(c.l());
    }
    if trace > 0.0 {
        let mut eps = 1e-14 * trace;
        while eps <= 1e-8 * trace * (1.0 + 1e-12) {
            let jittered = omega + DMatrix::identity(k, k) * eps;
            if let Some(c) = jittered.cholesky() {
                log::debug!("covariance needed jitter {eps:.3e}");
                return Ok(c.l());
            }
            eps *= 10.0;
        }
    }
    Err(Error::NotPsd(format!("Cholesky failed after jitter up to 1e-8 x trace ({trace:.3e})")))
}
