//! Competing moment-selection procedures: J-test based information
//! criteria, the Durbin-Hausman-Wu pretest, the downward J-test, the
//! canonical-correlations criterion and their combination.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{Dataset, MomentSet};
use crate::error::{Error, Result};
use crate::estimators;
use crate::linalg;

/// Penalty weight `κ_n` per overidentifying restriction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `log n`.
    Bic,
    /// `2.01 log log n`.
    Hq,
    /// `2`.
    Aic,
    /// A fixed `κ`, independent of `n`.
    Fixed(f64),
}

impl Penalty {
    pub fn kappa(&self, n: usize) -> Result<f64> {
        if n < 8 {
            return Err(Error::OutOfRange(format!("information criteria need n >= 8, got {n}")));
        }
        let n = n as f64;
        Ok(match *self {
            Penalty::Bic => n.ln(),
            Penalty::Hq => 2.01 * n.ln().ln(),
            Penalty::Aic => 2.0,
            Penalty::Fixed(k) => k,
        })
    }

    pub fn label(&self) -> String {
        match self {
            Penalty::Bic => "BIC".into(),
            Penalty::Hq => "HQ".into(),
            Penalty::Aic => "AIC".into(),
            Penalty::Fixed(k) => format!("kappa={k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JStatistic {
    pub value: f64,
    pub df: usize,
    /// The weighting matrix was singular and its pseudo-inverse was used.
    pub pinv_fallback: bool,
}

impl JStatistic {
    /// Upper-tail `χ²_df` probability; 1 when just identified.
    pub fn p_value(&self) -> f64 {
        if self.df == 0 {
            return 1.0;
        }
        ChiSquared::new(self.df as f64).map(|c| c.sf(self.value.max(0.0))).unwrap_or(f64::NAN)
    }
}

/// `J_n(S) = n f̄' Ω̂_S^{-1} f̄` at the candidate's own estimate, with the
/// centered covariance estimator.
pub fn j_statistic(d: &Dataset, s: &MomentSet) -> Result<JStatistic> {
    let fit = estimators::fit_candidate(d, s)?;
    let zs = d.z_subset(s);
    let n = d.n() as f64;
    let df = s.len() - d.r();
    let fbar = zs.transpose() * &fit.residuals / n;
    let omega = estimators::omega_centered(d, s, &fit.residuals)?;
    let (quad, pinv_fallback) = match linalg::spd_solve_vec(&omega, &fbar, "Omega_S") {
        Ok(sol) => (fbar.dot(&sol), false),
        Err(_) => {
            log::warn!("singular moment covariance for candidate {}; using pseudo-inverse", s.id());
            (fbar.dot(&(linalg::pinv_symmetric(&omega) * &fbar)), true)
        }
    };
    Ok(JStatistic { value: n * quad, df, pinv_fallback })
}

/// One row of a criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub candidate: String,
    pub moments: usize,
    /// `J_n(S)` for GMM criteria, `n log(1 − R²)` for CCIC.
    pub statistic: f64,
    pub penalty: f64,
    pub value: f64,
    pub selected: bool,
}

fn check_candidates(candidates: &[MomentSet]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidates".into()));
    }
    Ok(())
}

fn mark_selected(mut rows: Vec<CriterionValue>, idx: usize) -> Vec<CriterionValue> {
    rows[idx].selected = true;
    rows
}

/// Minimizer of `J_n(S) − (|S| − r) κ_n`; ties go to the larger set, then
/// the lowest id.
pub fn gmm_msc_select(
    d: &Dataset,
    candidates: &[MomentSet],
    penalty: Penalty,
) -> Result<(MomentSet, Vec<CriterionValue>)> {
    check_candidates(candidates)?;
    let kappa = penalty.kappa(d.n())?;
    let mut rows = Vec::with_capacity(candidates.len());
    for s in candidates {
        let j = j_statistic(d, s)?;
        let pen = j.df as f64 * kappa;
        rows.push(CriterionValue {
            candidate: s.id().to_string(),
            moments: s.len(),
            statistic: j.value,
            penalty: pen,
            value: j.value - pen,
            selected: false,
        });
    }
    let idx = argmin_largest(&rows);
    Ok((candidates[idx].clone(), mark_selected(rows, idx)))
}

fn argmin_largest(rows: &[CriterionValue]) -> usize {
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    (0..rows.len())
        .min_by(|&a, &b| {
            key(rows[a].value)
                .total_cmp(&key(rows[b].value))
                .then(rows[b].moments.cmp(&rows[a].moments))
                .then(rows[a].candidate.cmp(&rows[b].candidate))
        })
        .unwrap()
}

fn argmin_smallest(rows: &[CriterionValue]) -> usize {
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    (0..rows.len())
        .min_by(|&a, &b| {
            key(rows[a].value)
                .total_cmp(&key(rows[b].value))
                .then(rows[a].moments.cmp(&rows[b].moments))
                .then(rows[a].candidate.cmp(&rows[b].candidate))
        })
        .unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhwResult {
    pub stat: f64,
    pub select_ols: bool,
}

/// Durbin-Hausman-Wu pretest of OLS against TSLS on `Z1`:
/// `n(β̂_OLS − β̃_TSLS)² / (σ̂_ε²(1/γ̂² − 1/σ̂_x²))`. OLS is kept when the
/// statistic falls below `critical_value`.
pub fn dhw_test(d: &Dataset, critical_value: f64) -> Result<DhwResult> {
    let sig = estimators::sigma_estimates(d)?;
    let denom = sig.sigma_eps_sq * (1.0 / sig.gamma_sq - 1.0 / sig.sigma_x_sq);
    if !(sig.gamma_sq < sig.sigma_x_sq) || !(denom > 0.0) {
        return Err(Error::DegenerateVariance(format!(
            "gamma^2 = {:.3e} must be below sigma_x^2 = {:.3e}",
            sig.gamma_sq, sig.sigma_x_sq
        )));
    }
    let ols = estimators::fit_ols(d.y(), d.x())?;
    let tsls = estimators::fit_tsls(d.y(), d.x(), d.z1())?;
    let diff = ols.beta[0] - tsls.beta[0];
    let stat = d.n() as f64 * diff * diff / denom;
    Ok(DhwResult { stat, select_ols: stat < critical_value })
}

/// Keeps the largest candidate whose J-test is not rejected at level
/// `alpha`, moving down in `|S|`; if every test rejects, the smallest
/// candidate is returned.
pub fn downward_j_select(d: &Dataset, candidates: &[MomentSet], alpha: f64) -> Result<MomentSet> {
    check_candidates(candidates)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha}")));
    }
    let mut order: Vec<&MomentSet> = candidates.iter().collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then(a.id().cmp(b.id())));
    for s in &order {
        if j_statistic(d, s)?.p_value() > alpha {
            return Ok((*s).clone());
        }
    }
    Ok((*order.last().unwrap()).clone())
}

/// Largest R² accepted before clamping.
const R2_MAX: f64 = 1.0 - 1e-12;

/// Uncentered first-stage `R²` of the single regressor on `Z_S`.
pub fn first_stage_r2(d: &Dataset, s: &MomentSet) -> Result<f64> {
    if d.r() != 1 {
        return Err(Error::Unsupported("CCIC needs a single endogenous regressor".into()));
    }
    let zs = d.z_subset(s);
    let x: DVector<f64> = d.x().column(0).into_owned();
    let ztx = zs.transpose() * &x;
    let coef = linalg::spd_solve_vec(&(zs.transpose() * &zs), &ztx, "Z_S'Z_S")?;
    let r2 = ztx.dot(&coef) / x.dot(&x);
    if r2 > R2_MAX {
        log::warn!("first-stage R^2 for {} is {r2}; clamping", s.id());
        return Ok(R2_MAX);
    }
    Ok(r2.max(0.0))
}

/// Minimizer of `n log(1 − R²(S)) + (|S| − r) κ_n`; ties go to the smaller
/// set, then the lowest id.
pub fn ccic_select(
    d: &Dataset,
    candidates: &[MomentSet],
    penalty: Penalty,
) -> Result<(MomentSet, Vec<CriterionValue>)> {
    check_candidates(candidates)?;
    let kappa = penalty.kappa(d.n())?;
    let n = d.n() as f64;
    let mut rows = Vec::with_capacity(candidates.len());
    for s in candidates {
        s.validate(d.p(), d.q(), d.r())?;
        let fit = n * (1.0 - first_stage_r2(d, s)?).ln();
        let pen = (s.len() - d.r()) as f64 * kappa;
        rows.push(CriterionValue {
            candidate: s.id().to_string(),
            moments: s.len(),
            statistic: fit,
            penalty: pen,
            value: fit + pen,
            selected: false,
        });
    }
    let idx = argmin_smallest(&rows);
    Ok((candidates[idx].clone(), mark_selected(rows, idx)))
}

/// Uses the larger of two candidates only when both the GMM criterion and
/// CCIC pick it.
pub fn combined_select(d: &Dataset, candidates: &[MomentSet], penalty: Penalty) -> Result<MomentSet> {
    if candidates.len() != 2 {
        return Err(Error::Unsupported(format!(
            "combined criterion compares exactly two candidates, got {}",
            candidates.len()
        )));
    }
    let (small, large) = if candidates[0].len() <= candidates[1].len() {
        (&candidates[0], &candidates[1])
    } else {
        (&candidates[1], &candidates[0])
    };
    let (gmm, _) = gmm_msc_select(d, candidates, penalty)?;
    let (ccic, _) = ccic_select(d, candidates, penalty)?;
    Ok(combine(gmm.id() == large.id(), ccic.id() == large.id(), small, large).clone())
}

fn combine<'a>(gmm_large: bool, ccic_large: bool, small: &'a MomentSet, large: &'a MomentSet) -> &'a MomentSet {
    if gmm_large && ccic_large {
        large
    } else {
        small
    }
}
