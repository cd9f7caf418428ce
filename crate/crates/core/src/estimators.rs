//! OLS, TSLS and subset-TSLS estimation plus the covariance estimators fed
//! to the selection criteria.
//!
//! All second moments divide by `n`; there are no degrees-of-freedom
//! corrections anywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CandidateKind, Dataset, EstimateResult, MomentSet};
use crate::error::{Error, Result};
use crate::linalg;

/// Variance components of the single-regressor OLS/TSLS problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimates {
    /// `x'x / n`.
    pub sigma_x_sq: f64,
    /// `x' P_Z x / n`.
    pub gamma_sq: f64,
    /// `sigma_x_sq - gamma_sq`.
    pub sigma_v_sq: f64,
    pub sigma_eps_sq: f64,
}

/// Residuals used for the structural error variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualSource {
    #[default]
    Tsls,
    Ols,
}

pub fn fit_ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<EstimateResult> {
    fit_ols_labeled(y, x, "OLS")
}

fn fit_ols_labeled(y: &DVector<f64>, x: &DMatrix<f64>, label: &str) -> Result<EstimateResult> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    let n = y.len() as f64;
    let xtx = x.transpose() * x;
    let xtx_inv = linalg::spd_inverse(&xtx, "X'X")?;
    let beta = &xtx_inv * (x.transpose() * y);
    let residuals = y - x * &beta;
    let sigma_sq = residuals.norm_squared() / n;
    Ok(EstimateResult::from_parts(beta, xtx_inv * sigma_sq, residuals, label))
}

pub fn fit_tsls(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<EstimateResult> {
    fit_tsls_labeled(y, x, z, "TSLS")
}

fn fit_tsls_labeled(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    label: &str,
) -> Result<EstimateResult> {
    if x.nrows() != y.len() || z.nrows() != y.len() {
        return Err(Error::Dimension("y, X and Z must have the same number of rows".into()));
    }
    if z.ncols() < x.ncols() {
        return Err(Error::Rank(format!(
            "{} instruments cannot identify {} coefficients",
            z.ncols(),
            x.ncols()
        )));
    }
    let n = y.len() as f64;
    let ztz = z.transpose() * z;
    let zt_x = z.transpose() * x;
    let zt_y = z.transpose() * y;
    // (Z'Z)^{-1} Z'X and (Z'Z)^{-1} Z'y
    let coef_x = linalg::spd_solve(&ztz, &zt_x, "Z'Z")?;
    let coef_y = linalg::spd_solve_vec(&ztz, &zt_y, "Z'Z")?;
    let xpx = zt_x.transpose() * &coef_x;
    let xpy = zt_x.transpose() * &coef_y;
    let xpx_inv = linalg::spd_inverse(&linalg::symmetrize(&xpx), "X'P_Z X")?;
    let beta = &xpx_inv * xpy;
    let residuals = y - x * &beta;
    let sigma_sq = residuals.norm_squared() / n;
    Ok(EstimateResult::from_parts(beta, xpx_inv * sigma_sq, residuals, label))
}

/// Estimates one candidate: OLS for the OLS candidate, otherwise TSLS with
/// instruments `Z Ξ_S'`.
pub fn fit_candidate(d: &Dataset, s: &MomentSet) -> Result<EstimateResult> {
    s.validate(d.p(), d.q(), d.r())?;
    match s.kind() {
        CandidateKind::OlsCandidate => fit_ols_labeled(d.y(), d.x(), s.id()),
        CandidateKind::TslsCandidate | CandidateKind::IvSubset => {
            fit_tsls_labeled(d.y(), d.x(), &d.z_subset(s), s.id())
        }
    }
}

/// Variance components for the OLS-versus-TSLS problem. The first stage
/// uses the baseline instruments `Z1`.
pub fn sigma_estimates(d: &Dataset) -> Result<SigmaEstimates> {
    sigma_estimates_with(d, ResidualSource::Tsls)
}

pub fn sigma_estimates_with(d: &Dataset, source: ResidualSource) -> Result<SigmaEstimates> {
    if d.r() != 1 {
        return Err(Error::Unsupported(format!(
            "variance components need a scalar regressor, got r = {}",
            d.r()
        )));
    }
    let n = d.n() as f64;
    let x = d.x().column(0).into_owned();
    let z = d.z1();
    let sigma_x_sq = x.norm_squared() / n;
    let ztz = z.transpose() * z;
    let ztx = z.transpose() * &x;
    let coef = linalg::spd_solve_vec(&ztz, &ztx, "Z1'Z1")?;
    let gamma_sq = ztx.dot(&coef) / n;
    if !(gamma_sq > 1e-10 * sigma_x_sq) {
        return Err(Error::WeakInstrument { gamma_sq });
    }
    let sigma_v_sq = sigma_x_sq - gamma_sq;
    let fit = match source {
        ResidualSource::Tsls => fit_tsls(d.y(), d.x(), z)?,
        ResidualSource::Ols => fit_ols(d.y(), d.x())?,
    };
    let sigma_eps_sq = fit.residuals.norm_squared() / n;
    Ok(SigmaEstimates { sigma_x_sq, gamma_sq, sigma_v_sq, sigma_eps_sq })
}

/// Heteroskedasticity-robust covariance of `u_i z_i` with the sample mean
/// removed, for instrument matrix `z`.
pub(crate) fn centered_moment_covariance(z: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let mut w = z.clone();
    for (mut row, &ui) in w.row_iter_mut().zip(u.iter()) {
        row *= ui;
    }
    let mean = w.row_sum().transpose() / n;
    let raw = w.transpose() * &w / n;
    linalg::symmetrize(&(raw - &mean * mean.transpose()))
}

pub(crate) fn uncentered_moment_covariance(z: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let n = z.nrows() as f64;
    let mut w = z.clone();
    for (mut row, &ui) in w.row_iter_mut().zip(u.iter()) {
        row *= ui;
    }
    linalg::symmetrize(&(w.transpose() * &w / n))
}

/// Centered robust estimate `Ω̂_S` for candidate `s` given its residuals.
pub fn omega_centered(d: &Dataset, s: &MomentSet, residuals: &DVector<f64>) -> Result<DMatrix<f64>> {
    if residuals.len() != d.n() {
        return Err(Error::Dimension(format!(
            "{} residuals for {} observations",
            residuals.len(),
            d.n()
        )));
    }
    s.validate(d.p(), d.q(), d.r())?;
    Ok(centered_moment_covariance(&d.z_subset(s), residuals))
}

/// Full `(p+q)×(p+q)` estimate of `Ω` for the instrument-selection problem.
///
/// Centered robust estimator with full-set TSLS residuals, except the
/// baseline block which is the uncentered estimator built from the valid
/// estimator's residuals.
pub fn omega_assembled(d: &Dataset) -> Result<DMatrix<f64>> {
    let p = d.p();
    let valid = fit_tsls(d.y(), d.x(), d.z1())?;
    let omega_11 = uncentered_moment_covariance(d.z1(), &valid.residuals);
    if d.q() == 0 {
        return Ok(omega_11);
    }
    let z = d.z();
    let full = fit_tsls(d.y(), d.x(), &z)?;
    let mut omega = centered_moment_covariance(&z, &full.residuals);
    omega.view_mut((0, 0), (p, p)).copy_from(&omega_11);
    Ok(omega)
}

/// `σ̂_ε² Z'Z / n` over all `p + q` instruments: the homoskedastic
/// estimate of `Ω` used by the OLS-versus-TSLS formulas.
pub fn omega_homoskedastic(d: &Dataset, sigma_eps_sq: f64) -> DMatrix<f64> {
    let z = d.z();
    linalg::symmetrize(&(z.transpose() * &z * (sigma_eps_sq / d.n() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::dgp::{gen_choose_iv, gen_ols_tsls, ChooseIvDesign, OlsTslsDesign};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_choose_iv(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gen_choose_iv(&ChooseIvDesign::new(0.4, 0.2, n).unwrap(), &mut rng).unwrap()
    }

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 1.5, 1.0]);
        let b = DVector::from_vec(vec![0.7, -1.3]);
        let y = &x * &b;
        let fit = fit_ols(&y, &x).unwrap();
        assert!((fit.beta_vec() - b).norm() < 1e-12);
        assert!(fit.residuals.norm() < 1e-12);
    }

    #[test]
    fn ols_scalar_example() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let y = DVector::from_vec(vec![2.0, 4.0]);
        assert!((fit_ols(&y, &x).unwrap().beta[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ols_matches_hand_rolled_normal_equations() {
        let d = seeded_choose_iv(100, 11);
        let x = linalg::hcat(d.x(), d.z1());
        let fit = fit_ols(d.y(), &x).unwrap();
        // Oracle: Gaussian elimination on X'X b = X'y with plain loops.
        let k = x.ncols();
        let mut a = vec![vec![0.0; k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = (0..d.n()).map(|t| x[(t, i)] * x[(t, j)]).sum();
            }
            a[i][k] = (0..d.n()).map(|t| x[(t, i)] * d.y()[t]).sum();
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..k {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..=k {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        for i in 0..k {
            assert!((fit.beta[i] - a[i][k] / a[i][i]).abs() < 1e-10);
        }
    }

    #[test]
    fn tsls_with_own_instruments_is_ols() {
        let d = seeded_choose_iv(200, 3);
        let ols = fit_ols(d.y(), d.x()).unwrap();
        let tsls = fit_tsls(d.y(), d.x(), d.x()).unwrap();
        assert!((ols.beta[0] - tsls.beta[0]).abs() < 1e-12);
    }

    #[test]
    fn just_identified_tsls_is_iv_ratio() {
        let d = seeded_choose_iv(150, 5);
        let z = d.z2().clone();
        let fit = fit_tsls(d.y(), d.x(), &z).unwrap();
        let zc = z.column(0);
        let ratio = zc.dot(d.y()) / zc.dot(&d.x().column(0));
        assert!((fit.beta[0] - ratio).abs() < 1e-12 * ratio.abs().max(1.0));
        let moment = z.transpose() * &fit.residuals / d.n() as f64;
        assert!(moment.norm() < 1e-10);
    }

    #[test]
    fn tsls_matches_explicit_two_stages() {
        let d = seeded_choose_iv(300, 9);
        let z = d.z();
        let tsls = fit_tsls(d.y(), d.x(), &z).unwrap();
        // first stage: fitted x from regressing x on Z; second stage: OLS of y on fitted x
        let first = fit_ols(&d.x().column(0).into_owned(), &z).unwrap();
        let xhat = &z * first.beta_vec();
        let second = fit_ols(d.y(), &DMatrix::from_column_slice(d.n(), 1, xhat.as_slice())).unwrap();
        assert!((tsls.beta[0] - second.beta[0]).abs() < 1e-10);
        // residuals use X, not the fitted X
        let resid = d.y() - d.x() * tsls.beta_vec();
        assert!((resid - &tsls.residuals).norm() < 1e-12);
    }

    #[test]
    fn fit_candidate_dispatch() {
        let d = seeded_choose_iv(120, 2);
        let valid = fit_candidate(&d, &MomentSet::valid(3)).unwrap();
        assert_eq!(valid.beta, fit_tsls(d.y(), d.x(), d.z1()).unwrap().beta);
        let full = fit_candidate(&d, &MomentSet::full(3, 1)).unwrap();
        assert!((full.beta[0] - fit_tsls(d.y(), d.x(), &d.z()).unwrap().beta[0]).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dd = gen_ols_tsls(&OlsTslsDesign::new(0.4, 0.1, 100).unwrap(), &mut rng).unwrap();
        let ols = fit_candidate(&dd, &MomentSet::ols_candidate(3)).unwrap();
        assert_eq!(ols.beta, fit_ols(dd.y(), dd.x()).unwrap().beta);
        assert!(ols.se[0] >= 0.0 && (ols.se[0] - ols.vcov[0][0].sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sigma_components_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = gen_ols_tsls(&OlsTslsDesign::new(0.6, 0.3, 500).unwrap(), &mut rng).unwrap();
        let s = sigma_estimates(&d).unwrap();
        assert_eq!(s.sigma_x_sq, s.gamma_sq + s.sigma_v_sq);
        assert!(s.sigma_v_sq >= 0.0);
        let ols = sigma_estimates_with(&d, ResidualSource::Ols).unwrap();
        assert!(ols.sigma_eps_sq <= s.sigma_eps_sq);
    }

    #[test]
    fn sigma_estimates_exact_span_and_orthogonal_cases() {
        let n = 20;
        let z1 = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 2)) % 7) as f64 - 3.0);
        let x_in_span = DMatrix::from_fn(n, 1, |i, _| 2.0 * z1[(i, 0)] - z1[(i, 1)]);
        let y = DVector::from_fn(n, |i, _| (i as f64).sin());
        let z2 = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.7).cos());
        let d = Dataset::new(y.clone(), x_in_span, z1.clone(), z2.clone()).unwrap();
        let s = sigma_estimates(&d).unwrap();
        assert!(s.sigma_v_sq.abs() < 1e-10 * s.sigma_x_sq);

        // x orthogonal to both baseline instruments in sample
        let z1 = DMatrix::from_fn(4 * 5, 2, |i, j| if i % 4 == j { 1.0 } else { 0.0 });
        let x = DMatrix::from_fn(20, 1, |i, _| if i % 4 == 2 { 1.0 } else if i % 4 == 3 { -0.5 } else { 0.0 });
        let d = Dataset::new(y, x, z1, z2).unwrap();
        assert!(matches!(sigma_estimates(&d), Err(Error::WeakInstrument { .. })));
    }

    #[test]
    fn sigma_estimates_match_dgp_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let d = gen_ols_tsls(&OlsTslsDesign::new(0.6, 0.2, 10_000).unwrap(), &mut rng).unwrap();
        let s = sigma_estimates(&d).unwrap();
        assert!((s.sigma_x_sq - 1.0).abs() < 0.05);
        assert!((s.gamma_sq - 0.36).abs() < 0.036);
    }

    #[test]
    fn omega_centered_toy_and_zero() {
        let y = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let z1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]);
        let z2 = DMatrix::zeros(3, 0);
        let d = Dataset::new(y, x, z1, z2).unwrap();
        let zero = omega_centered(&d, &MomentSet::valid(1), &DVector::zeros(3)).unwrap();
        assert_eq!(zero, DMatrix::zeros(1, 1));

        let z = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let u = DVector::from_vec(vec![1.0, -1.0]);
        assert!((centered_moment_covariance(&z, &u)[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn omega_centered_matches_two_pass_loop() {
        let d = seeded_choose_iv(250, 17);
        let s = MomentSet::full(3, 1);
        let fit = fit_candidate(&d, &s).unwrap();
        let omega = omega_centered(&d, &s, &fit.residuals).unwrap();
        let z = d.z();
        let n = d.n();
        let k = z.ncols();
        let mut mean = vec![0.0; k];
        for i in 0..n {
            for a in 0..k {
                mean[a] += fit.residuals[i] * z[(i, a)] / n as f64;
            }
        }
        for a in 0..k {
            for b in 0..k {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += fit.residuals[i].powi(2) * z[(i, a)] * z[(i, b)];
                }
                let expected = acc / n as f64 - mean[a] * mean[b];
                assert!((omega[(a, b)] - expected).abs() < 1e-12);
            }
        }
        let eig = omega.symmetric_eigen().eigenvalues;
        let max = eig.max();
        assert!(eig.min() >= -1e-10 * max);
    }

    #[test]
    fn omega_assembled_is_symmetric_and_near_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = gen_choose_iv(&ChooseIvDesign::new(0.4, 0.0, 10_000).unwrap(), &mut rng).unwrap();
        let omega = omega_assembled(&d).unwrap();
        assert_eq!(omega, omega.transpose());
        // all instruments valid and errors normal: Ω = σ_ε² E[zz'] with σ_ε² = 1
        let mut pop = DMatrix::zeros(4, 4);
        for i in 0..3 {
            pop[(i, i)] = 1.0 / 3.0;
        }
        pop[(3, 3)] = 1.0;
        for i in 0..4 {
            let rel = (omega[(i, i)] - pop[(i, i)]).abs() / pop[(i, i)];
            assert!(rel < 0.10, "diag {i}: {} vs {}", omega[(i, i)], pop[(i, i)]);
        }
        let rel_fro = (&omega - &pop).norm() / pop.norm();
        assert!(rel_fro < 0.10, "relative Frobenius error {rel_fro}");
    }

    #[test]
    fn omega_assembled_without_suspects_is_uncentered_block() {
        let full = seeded_choose_iv(80, 1);
        let d = Dataset::new(full.y().clone(), full.x().clone(), full.z1().clone(), DMatrix::zeros(80, 0))
            .unwrap();
        let omega = omega_assembled(&d).unwrap();
        let valid = fit_tsls(d.y(), d.x(), d.z1()).unwrap();
        let expected = uncentered_moment_covariance(d.z1(), &valid.residuals);
        assert_eq!(omega, expected);
    }
}
