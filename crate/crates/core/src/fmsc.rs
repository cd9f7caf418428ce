//! Bias estimation and the focused moment selection criterion.
//!
//! For a candidate `S` with influence vector `c_S = −∇μ' K_S Ξ_S` (laid out
//! over all `p + q` moments) the criterion is
//! `c_S' {blockdiag(0, τ̂τ̂' − Ψ̂Ω̂Ψ̂') + Ω̂} c_S`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{selection_matrix, CandidateKind, Dataset, GmmComponents, MomentSet};
use crate::error::{Error, Result};
use crate::estimators::{self, SigmaEstimates};
use crate::linalg;

/// Scalar parameter of interest `μ(β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A single coefficient, by position in `X`.
    Coefficient(usize),
    /// A user-supplied gradient `∇μ` of length `r`.
    Gradient(Vec<f64>),
}

impl Target {
    pub fn gradient(&self, r: usize) -> Result<DVector<f64>> {
        match self {
            Target::Coefficient(k) if *k < r => {
                let mut g = DVector::zeros(r);
                g[*k] = 1.0;
                Ok(g)
            }
            Target::Coefficient(k) => {
                Err(Error::Dimension(format!("target coefficient {k} but only {r} regressors")))
            }
            Target::Gradient(g) if g.len() == r && g.iter().all(|v| v.is_finite()) => {
                Ok(DVector::from_column_slice(g))
            }
            Target::Gradient(g) => Err(Error::Dimension(format!(
                "gradient has length {}, expected {r} finite entries",
                g.len()
            ))),
        }
    }
}

/// Squared-bias and variance estimates for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmscValue {
    pub bias_sq: f64,
    pub variance: f64,
    pub fmsc: f64,
}

impl FmscValue {
    pub fn positive_part(&self) -> f64 {
        self.bias_sq.max(0.0) + self.variance
    }
}

/// One row of an [`FmscReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFmsc {
    pub candidate: String,
    pub moments: usize,
    pub estimate: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub fmsc: f64,
    pub fmsc_pp: f64,
    pub selected: bool,
    pub selected_pp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmscReport {
    pub candidates: Vec<CandidateFmsc>,
    pub selected: String,
    pub selected_pp: String,
    pub tau: Vec<f64>,
    /// `Ψ̂Ω̂Ψ̂'`.
    pub tau_cov: Vec<Vec<f64>>,
}

impl FmscReport {
    pub fn selected_row(&self) -> &CandidateFmsc {
        self.candidates.iter().find(|c| c.selected).expect("report has a selected candidate")
    }

    pub fn selected_pp_row(&self) -> &CandidateFmsc {
        self.candidates.iter().find(|c| c.selected_pp).expect("report has a selected candidate")
    }
}

/// Index of the smallest value; ties go to fewer moment conditions, then the
/// lexicographically smallest id. NaN never wins against a number.
pub fn argmin_fewest(values: &[f64], sizes: &[usize], ids: &[&str]) -> usize {
    assert!(!values.is_empty() && values.len() == sizes.len() && values.len() == ids.len());
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    (0..values.len())
        .min_by(|&a, &b| {
            key(values[a])
                .total_cmp(&key(values[b]))
                .then(sizes[a].cmp(&sizes[b]))
                .then(ids[a].cmp(ids[b]))
        })
        .unwrap()
}

/// `τ̂ = Z2'(y − X β̂_v)/√n` with `β̂_v` the TSLS estimate on `Z1`.
pub fn tau_hat_iv(d: &Dataset) -> Result<DVector<f64>> {
    if d.q() == 0 {
        return Ok(DVector::zeros(0));
    }
    let valid = estimators::fit_tsls(d.y(), d.x(), d.z1())?;
    Ok(d.z2().transpose() * &valid.residuals / (d.n() as f64).sqrt())
}

/// `−K̂_S = n (X'P_S X)^{-1} X'Z_S (Z_S'Z_S)^{-1}`, returned with its sign
/// flipped to give `K̂_S` (`r × |S|`).
pub fn k_hat(d: &Dataset, s: &MomentSet) -> Result<DMatrix<f64>> {
    let zs = d.z_subset(s);
    k_hat_from(d.x(), &zs)
}

fn k_hat_from(x: &DMatrix<f64>, zs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let ztz = zs.transpose() * zs;
    let zt_x = zs.transpose() * x;
    // (Z'Z)^{-1} Z'X, so X'Z (Z'Z)^{-1} is its transpose
    let b = linalg::spd_solve(&ztz, &zt_x, "Z_S'Z_S")?;
    let xpx = linalg::symmetrize(&(zt_x.transpose() * &b));
    let a = linalg::spd_solve(&xpx, &b.transpose(), "X'P_S X")?;
    Ok(a * (-n))
}

/// `Ψ̂ = [ −(Z2'X/n)(−K̂_v)  I_q ]`.
pub fn psi_hat_iv(d: &Dataset) -> Result<DMatrix<f64>> {
    let (p, q) = (d.p(), d.q());
    let neg_k_v = -k_hat_from(d.x(), d.z1())?;
    let h = d.z2().transpose() * d.x() / d.n() as f64;
    let mut psi = DMatrix::zeros(q, p + q);
    psi.view_mut((0, 0), (q, p)).copy_from(&(-(h * neg_k_v)));
    psi.view_mut((0, p), (q, q)).fill_with_identity();
    Ok(psi)
}

/// `τ̂τ̂' − Ψ̂Ω̂Ψ̂'`.
pub fn bias_matrix(tau: &DVector<f64>, psi: &DMatrix<f64>, omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = tau.len();
    if psi.nrows() != q || psi.ncols() != omega.nrows() || omega.nrows() != omega.ncols() {
        return Err(Error::Dimension(format!(
            "tau {q}, Psi {}x{}, Omega {}x{}",
            psi.nrows(),
            psi.ncols(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let v = psi * omega * psi.transpose();
    Ok(linalg::symmetrize(&(tau * tau.transpose() - v)))
}

/// Evaluates the criterion for one candidate.
pub fn fmsc_value(c: &GmmComponents) -> FmscValue {
    let p = c.p();
    let q = c.tau.len();
    let infl = c.influence();
    let d = infl.rows(p, q).into_owned();
    let tau_cov = &c.psi * &c.omega * c.psi.transpose();
    let bias_sq = if d.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        d.dot(&c.tau).powi(2) - (d.transpose() * tau_cov * &d)[0]
    };
    let variance = (infl.transpose() * &c.omega * &infl)[0].max(0.0);
    FmscValue { bias_sq, variance, fmsc: bias_sq + variance }
}

/// Shared ingredients for every candidate of an instrument-selection problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IvInputs {
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub tau: DVector<f64>,
}

impl IvInputs {
    pub fn estimate(d: &Dataset) -> Result<Self> {
        if d.q() == 0 {
            return Err(Error::Config("instrument selection needs suspect instruments".into()));
        }
        Ok(Self { omega: estimators::omega_assembled(d)?, psi: psi_hat_iv(d)?, tau: tau_hat_iv(d)? })
    }

    pub fn tau_cov(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.psi * &self.omega * self.psi.transpose()))
    }

    pub fn components(&self, d: &Dataset, s: &MomentSet, grad: &DVector<f64>) -> Result<GmmComponents> {
        GmmComponents::new(
            grad.clone(),
            k_hat(d, s)?,
            selection_matrix(s, d.p(), d.q())?,
            self.omega.clone(),
            self.psi.clone(),
            self.tau.clone(),
            d.n(),
        )
    }
}

fn build_report(
    ids: &[&str],
    sizes: &[usize],
    estimates: &[f64],
    values: &[FmscValue],
    selected: usize,
    selected_pp: usize,
    tau: &DVector<f64>,
    tau_cov: &DMatrix<f64>,
) -> FmscReport {
    let candidates = (0..ids.len())
        .map(|i| CandidateFmsc {
            candidate: ids[i].to_string(),
            moments: sizes[i],
            estimate: estimates[i],
            bias_sq: values[i].bias_sq,
            variance: values[i].variance,
            fmsc: values[i].fmsc,
            fmsc_pp: values[i].positive_part(),
            selected: i == selected,
            selected_pp: i == selected_pp,
        })
        .collect();
    FmscReport {
        candidates,
        selected: ids[selected].to_string(),
        selected_pp: ids[selected_pp].to_string(),
        tau: tau.iter().cloned().collect(),
        tau_cov: tau_cov.row_iter().map(|r| r.iter().cloned().collect()).collect(),
    }
}

/// FMSC for choosing among subsets of suspect instruments.
pub fn fmsc_choose_iv(d: &Dataset, candidates: &[MomentSet], target: &Target) -> Result<FmscReport> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidates".into()));
    }
    for s in candidates {
        if s.kind() != CandidateKind::IvSubset {
            return Err(Error::Config(format!("candidate {} is not an instrument subset", s.id())));
        }
        s.validate(d.p(), d.q(), d.r())?;
    }
    let grad = target.gradient(d.r())?;
    let inputs = IvInputs::estimate(d)?;
    let mut values = Vec::with_capacity(candidates.len());
    let mut estimates = Vec::with_capacity(candidates.len());
    for s in candidates {
        values.push(fmsc_value(&inputs.components(d, s, &grad)?));
        estimates.push(grad.dot(&estimators::fit_candidate(d, s)?.beta_vec()));
    }
    let ids: Vec<&str> = candidates.iter().map(|s| s.id()).collect();
    let sizes: Vec<usize> = candidates.iter().map(|s| s.len()).collect();
    let fm: Vec<f64> = values.iter().map(|v| v.fmsc).collect();
    let pp: Vec<f64> = values.iter().map(|v| v.positive_part()).collect();
    let sel = argmin_fewest(&fm, &sizes, &ids);
    let sel_pp = argmin_fewest(&pp, &sizes, &ids);
    Ok(build_report(&ids, &sizes, &estimates, &values, sel, sel_pp, &inputs.tau, &inputs.tau_cov()))
}

/// Closed-form quantities of the OLS-versus-TSLS comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsTslsFmsc {
    pub sigma: SigmaEstimates,
    pub tau: f64,
    /// `σ̂_v² σ̂_ε² σ̂_x² / γ̂²`.
    pub v_hat: f64,
    /// `τ̂² / V̂`.
    pub t_fmsc: f64,
    pub fmsc_ols: f64,
    pub fmsc_tsls: f64,
    pub beta_ols: f64,
    pub beta_tsls: f64,
    pub select_ols: bool,
}

/// Critical value of `τ̂²/V̂` below which OLS is preferred.
pub const OLS_TSLS_THRESHOLD: f64 = 2.0;

/// Closed-form FMSC comparison of OLS against TSLS on `Z1`.
pub fn ols_vs_tsls_closed_form(d: &Dataset) -> Result<OlsTslsFmsc> {
    let sigma = estimators::sigma_estimates(d)?;
    let SigmaEstimates { sigma_x_sq, gamma_sq, sigma_v_sq, sigma_eps_sq } = sigma;
    let tsls = estimators::fit_tsls(d.y(), d.x(), d.z1())?;
    let ols = estimators::fit_ols(d.y(), d.x())?;
    let x = d.x().column(0);
    let tau = x.dot(&tsls.residuals) / (d.n() as f64).sqrt();
    let v_hat = sigma_v_sq * sigma_eps_sq * sigma_x_sq / gamma_sq;
    if !(v_hat > 0.0) {
        return Err(Error::DegenerateVariance(format!("V-hat = {v_hat:.3e}")));
    }
    let t_fmsc = tau * tau / v_hat;
    let fmsc_ols = (tau * tau - v_hat) / (sigma_x_sq * sigma_x_sq) + sigma_eps_sq / sigma_x_sq;
    let fmsc_tsls = sigma_eps_sq / gamma_sq;
    Ok(OlsTslsFmsc {
        sigma,
        tau,
        v_hat,
        t_fmsc,
        fmsc_ols,
        fmsc_tsls,
        beta_ols: ols.beta[0],
        beta_tsls: tsls.beta[0],
        select_ols: t_fmsc < OLS_TSLS_THRESHOLD,
    })
}

/// The OLS and TSLS candidates of a dataset whose suspect block is `x`.
pub fn ols_tsls_candidates(d: &Dataset) -> Result<[MomentSet; 2]> {
    if d.r() != 1 || d.q() != 1 {
        return Err(Error::Unsupported(format!(
            "OLS versus TSLS needs r = q = 1, got r = {}, q = {}",
            d.r(),
            d.q()
        )));
    }
    Ok([MomentSet::ols_candidate(d.p()), MomentSet::tsls_candidate(d.p())])
}

/// Generic ingredients for the OLS-versus-TSLS problem: homoskedastic `Ω̂`,
/// with `τ̂` and `Ψ̂` as for instrument selection.
pub fn ols_tsls_inputs(d: &Dataset) -> Result<(IvInputs, SigmaEstimates)> {
    ols_tsls_candidates(d)?;
    let sigma = estimators::sigma_estimates(d)?;
    let inputs = IvInputs {
        omega: estimators::omega_homoskedastic(d, sigma.sigma_eps_sq),
        psi: psi_hat_iv(d)?,
        tau: tau_hat_iv(d)?,
    };
    Ok((inputs, sigma))
}

/// FMSC report for OLS against TSLS. Selection follows `τ̂²/V̂ < 2`, with an
/// exact tie going to TSLS; the positive-part rule also breaks ties toward
/// TSLS.
pub fn fmsc_ols_vs_tsls(d: &Dataset) -> Result<FmscReport> {
    let cf = ols_vs_tsls_closed_form(d)?;
    let sx4 = cf.sigma.sigma_x_sq * cf.sigma.sigma_x_sq;
    let values = [
        FmscValue {
            bias_sq: (cf.tau * cf.tau - cf.v_hat) / sx4,
            variance: cf.sigma.sigma_eps_sq / cf.sigma.sigma_x_sq,
            fmsc: cf.fmsc_ols,
        },
        FmscValue { bias_sq: 0.0, variance: cf.fmsc_tsls, fmsc: cf.fmsc_tsls },
    ];
    let [ols, tsls] = ols_tsls_candidates(d)?;
    let ids = [ols.id(), tsls.id()];
    let sizes = [ols.len(), tsls.len()];
    let sel = if cf.select_ols { 0 } else { 1 };
    let sel_pp = if values[0].positive_part() < values[1].positive_part() { 0 } else { 1 };
    let tau = DVector::from_element(1, cf.tau);
    let tau_cov = DMatrix::from_element(1, 1, cf.v_hat);
    Ok(build_report(&ids, &sizes, &[cf.beta_ols, cf.beta_tsls], &values, sel, sel_pp, &tau, &tau_cov))
}
