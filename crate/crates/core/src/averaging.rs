//! Moment-average estimators `μ̂ = Σ ω̂_S μ̂_S`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::SigmaEstimates;
use crate::fmsc;

const SUM_TOL: f64 = 1e-12;

/// Candidate weights that sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invariant("empty weight vector".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Invariant(format!("weights outside [0, 1]: {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Invariant(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn moment_average(weights: &WeightVector, estimates: &[f64]) -> Result<f64> {
    if weights.len() != estimates.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} estimates",
            weights.len(),
            estimates.len()
        )));
    }
    let sum: f64 = weights.0.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::Invariant(format!("weights sum to {sum}")));
    }
    Ok(weights.0.iter().zip(estimates).map(|(w, e)| w * e).sum())
}

/// Softmin weights `exp(−κ/2 · MSC_S) / Σ exp(−κ/2 · MSC_S')`.
pub fn exponential_weights(msc_values: &[f64], kappa: f64) -> Result<WeightVector> {
    if msc_values.is_empty() || msc_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("criterion values must be finite and nonempty".into()));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::OutOfRange(format!("kappa = {kappa}")));
    }
    let min = msc_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = msc_values.iter().map(|v| (-0.5 * kappa * (v - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    renormalize(&mut w);
    WeightVector::new(w)
}

/// Pushes rounding residue onto the largest weight so the sum is one.
fn renormalize(w: &mut [f64]) {
    let sum: f64 = w.iter().sum();
    let imax = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    w[imax] = (w[imax] + 1.0 - sum).clamp(0.0, 1.0);
}

/// One at the minimizer, zero elsewhere. Ties go to fewer moment
/// conditions, then the earlier candidate.
pub fn indicator_weights(values: &[f64], sizes: &[usize]) -> Result<WeightVector> {
    if values.is_empty() || values.len() != sizes.len() {
        return Err(Error::Dimension("values and sizes must be nonempty and equal length".into()));
    }
    let ids: Vec<String> = (0..values.len()).map(|i| format!("{i:020}")).collect();
    let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
    let k = fmsc::argmin_fewest(values, sizes, &refs);
    let mut w = vec![0.0; values.len()];
    w[k] = 1.0;
    WeightVector::new(w)
}

/// AMSE of `√n[ω β̂_OLS + (1 − ω) β̃_TSLS − β]` in the local limit.
pub fn amse_ols_tsls_average(omega: f64, tau: f64, sigma_x_sq: f64, sigma_eps_sq: f64, gamma_sq: f64) -> f64 {
    let bias_sq = tau * tau / (sigma_x_sq * sigma_x_sq);
    let var_gap = sigma_eps_sq * (1.0 / gamma_sq - 1.0 / sigma_x_sq);
    omega * omega * bias_sq + (omega * omega - 2.0 * omega) * var_gap + sigma_eps_sq / gamma_sq
}

/// Population AMSE-minimizing weight on OLS.
pub fn omega_star(tau: f64, sigma_x_sq: f64, sigma_eps_sq: f64, gamma_sq: f64) -> Result<f64> {
    let var_gap = sigma_eps_sq * (1.0 / gamma_sq - 1.0 / sigma_x_sq);
    if !(var_gap > 0.0) {
        return Err(Error::DegenerateVariance(format!("variance gap {var_gap:.3e}")));
    }
    Ok(1.0 / (1.0 + tau * tau / (sigma_x_sq * sigma_x_sq) / var_gap))
}

/// Plug-in weight with the squared OLS bias estimated by its positive part.
pub fn omega_star_plugin(sig: &SigmaEstimates, tau_hat: f64) -> Result<f64> {
    let SigmaEstimates { sigma_x_sq, gamma_sq, sigma_eps_sq, .. } = *sig;
    if !(gamma_sq > 0.0) {
        return Err(Error::WeakInstrument { gamma_sq });
    }
    let var_gap = sigma_eps_sq * (1.0 / gamma_sq - 1.0 / sigma_x_sq);
    if !(var_gap > 0.0) {
        return Err(Error::DegenerateVariance(format!("variance gap {var_gap:.3e}")));
    }
    let tau_var = sigma_eps_sq * sigma_x_sq * (sigma_x_sq / gamma_sq - 1.0);
    let bias_sq = ((tau_hat * tau_hat - tau_var) / (sigma_x_sq * sigma_x_sq)).max(0.0);
    Ok(1.0 / (1.0 + bias_sq / var_gap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageEstimate {
    pub beta_avg: f64,
    pub omega_star: f64,
    pub beta_ols: f64,
    pub beta_tsls: f64,
}

/// `ω̂* β̂_OLS + (1 − ω̂*) β̃_TSLS`.
pub fn avg_ols_tsls(d: &Dataset) -> Result<AverageEstimate> {
    let cf = fmsc::ols_vs_tsls_closed_form(d)?;
    let omega_star = omega_star_plugin(&cf.sigma, cf.tau)?;
    Ok(AverageEstimate {
        beta_avg: omega_star * cf.beta_ols + (1.0 - omega_star) * cf.beta_tsls,
        omega_star,
        beta_ols: cf.beta_ols,
        beta_tsls: cf.beta_tsls,
    })
}

/// Same as [`avg_ols_tsls`] with explicitly supplied ingredients.
pub fn avg_from_parts(sig: &SigmaEstimates, tau_hat: f64, beta_ols: f64, beta_tsls: f64) -> Result<f64> {
    let w = omega_star_plugin(sig, tau_hat)?;
    Ok(w * beta_ols + (1.0 - w) * beta_tsls)
}
