//! Naive, one-step and two-step intervals for a post-selection estimator.
//!
//! The two-step interval simulates the limit `Λ(τ*) = Σ_S φ_S(τ*, M) c_S·(M + (0, τ*))`
//! of `√n(μ̂ − μ₀)` for each `τ*` in a confidence region for `τ`, takes
//! equal-tailed quantiles `a(τ*)`, `b(τ*)` and reports
//! `[μ̂ − max b / √n, μ̂ − min a / √n]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{self, Penalty};
use crate::data::{CandidateKind, Dataset, EstimateResult, MomentSet};
use crate::error::{Error, Result};
use crate::estimators;
use crate::fmsc::{self, IvInputs, Target};
use crate::inference::chisq::{chi_sq_quantile, normal_two_sided_critical};
use crate::inference::mvn::mvn_draws;
use crate::inference::region::{ellipsoid, tau_region};
use crate::linalg;

/// How candidate weights `φ_S` are formed, both in the sample and inside
/// each simulated draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Indicator of the FMSC minimizer.
    Fmsc,
    /// Indicator of the positive-part FMSC minimizer.
    FmscPositivePart,
    /// Minimum-AMSE average of one biased and one unbiased candidate.
    MinAmseAverage,
    /// Downward J-test at level `alpha`.
    DownwardJ { alpha: f64 },
    /// Indicator of the GMM moment selection criterion minimizer.
    GmmMsc { penalty: Penalty },
    /// Data-independent weights.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CiMethod {
    Naive,
    OneStep,
    TwoStep,
}

impl CiMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CiMethod::Naive => "naive",
            CiMethod::OneStep => "one_step",
            CiMethod::TwoStep => "two_step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDiagnostic {
    pub tau_star: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub method: CiMethod,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub delta: f64,
    pub draws_j: usize,
    pub region_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<RegionDiagnostic>>,
}

impl CiResult {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSettings {
    pub alpha: f64,
    pub delta: f64,
    pub draws: usize,
    pub seed: u64,
    /// Objective evaluations per bound when `τ` is a vector.
    pub search_budget: usize,
    pub keep_diagnostics: bool,
}

impl Default for CiSettings {
    fn default() -> Self {
        Self { alpha: 0.05, delta: 0.05, draws: 10_000, seed: 0, search_budget: 2000, keep_diagnostics: false }
    }
}

impl CiSettings {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::OutOfRange(format!("alpha = {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::OutOfRange(format!("delta = {}", self.delta)));
        }
        if self.draws < 2 {
            return Err(Error::OutOfRange(format!("need at least 2 draws, got {}", self.draws)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    id: String,
    size: usize,
    /// `c_S = −∇μ' K_S Ξ_S` over all moments.
    c: DVector<f64>,
    /// Suspect block of `c_S`.
    d: DVector<f64>,
    unbiased: bool,
    variance: f64,
    /// `d' Ψ̂Ω̂Ψ̂' d`.
    dvd: f64,
    df: usize,
    /// `Ξ_S' Q_S Ξ_S`, present for rules that need the limiting J-statistic.
    q_full: Option<DMatrix<f64>>,
}

/// Everything the simulation needs about one dataset: candidate influence
/// vectors, `Ω̂`, `Ψ̂`, `τ̂`, the weight rule and the sample estimate.
#[derive(Debug, Clone)]
pub struct PostSelectionContext {
    n: usize,
    p: usize,
    q: usize,
    omega: DMatrix<f64>,
    psi: DMatrix<f64>,
    tau_hat: DVector<f64>,
    tau_cov: DMatrix<f64>,
    cands: Vec<Candidate>,
    estimates: Vec<f64>,
    rule: WeightRule,
    kappa: f64,
    j_crit: Vec<f64>,
    fmsc_ties_to_larger: bool,
    sample_weights: Vec<f64>,
    mu_hat: f64,
}

impl PostSelectionContext {
    /// Context for choosing among suspect-instrument subsets.
    pub fn choose_iv(d: &Dataset, candidates: &[MomentSet], target: &Target, rule: WeightRule) -> Result<Self> {
        for s in candidates {
            if s.kind() != CandidateKind::IvSubset {
                return Err(Error::Config(format!("candidate {} is not an instrument subset", s.id())));
            }
        }
        let inputs = IvInputs::estimate(d)?;
        Self::build(d, candidates, target, rule, inputs, false)
    }

    /// Context for OLS against TSLS on a dataset whose suspect block is `x`.
    pub fn ols_vs_tsls(d: &Dataset, rule: WeightRule) -> Result<Self> {
        let cands = fmsc::ols_tsls_candidates(d)?;
        let (inputs, _) = fmsc::ols_tsls_inputs(d)?;
        Self::build(d, &cands, &Target::Coefficient(0), rule, inputs, true)
    }

    fn build(
        d: &Dataset,
        candidates: &[MomentSet],
        target: &Target,
        rule: WeightRule,
        inputs: IvInputs,
        fmsc_ties_to_larger: bool,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("no candidates".into()));
        }
        let (p, q, r) = (d.p(), d.q(), d.r());
        let grad = target.gradient(r)?;
        let tau_cov = inputs.tau_cov();
        let needs_j = matches!(rule, WeightRule::DownwardJ { .. } | WeightRule::GmmMsc { .. });
        let f_hat = d.z().transpose() * d.x() / d.n() as f64;
        let mut cands = Vec::with_capacity(candidates.len());
        let mut estimates = Vec::with_capacity(candidates.len());
        for s in candidates {
            let comp = inputs.components(d, s, &grad)?;
            let c = comp.influence();
            let dv = c.rows(p, q).into_owned();
            let unbiased = dv.iter().all(|&v| v == 0.0);
            let variance = (c.transpose() * &inputs.omega * &c)[0].max(0.0);
            let dvd = (dv.transpose() * &tau_cov * &dv)[0];
            let q_full = if needs_j { Some(j_limit_matrix(&inputs.omega, &f_hat, s)?) } else { None };
            cands.push(Candidate {
                id: s.id().to_string(),
                size: s.len(),
                c,
                d: dv,
                unbiased,
                variance,
                dvd,
                df: s.len() - r,
                q_full,
            });
            estimates.push(grad.dot(&estimators::fit_candidate(d, s)?.beta_vec()));
        }
        let mut kappa = 0.0;
        let mut j_crit = vec![f64::INFINITY; cands.len()];
        let sample_weights = match &rule {
            WeightRule::DownwardJ { alpha } => {
                for (k, c) in cands.iter().enumerate() {
                    if c.df > 0 {
                        j_crit[k] = chi_sq_quantile(c.df, 1.0 - alpha)?;
                    }
                }
                let chosen = criteria::downward_j_select(d, candidates, *alpha)?;
                indicator_at(candidates.iter().position(|s| s.id() == chosen.id()).unwrap(), cands.len())
            }
            WeightRule::GmmMsc { penalty } => {
                kappa = penalty.kappa(d.n())?;
                let (chosen, _) = criteria::gmm_msc_select(d, candidates, *penalty)?;
                indicator_at(candidates.iter().position(|s| s.id() == chosen.id()).unwrap(), cands.len())
            }
            WeightRule::Fixed(w) => {
                if w.len() != cands.len() {
                    return Err(Error::Dimension(format!("{} fixed weights for {} candidates", w.len(), cands.len())));
                }
                crate::averaging::WeightVector::new(w.clone())?;
                w.clone()
            }
            _ => Vec::new(),
        };
        if matches!(rule, WeightRule::MinAmseAverage) {
            check_min_amse(&cands)?;
        }
        let mut ctx = Self {
            n: d.n(),
            p,
            q,
            omega: inputs.omega,
            psi: inputs.psi,
            tau_hat: inputs.tau,
            tau_cov,
            cands,
            estimates,
            rule,
            kappa,
            j_crit,
            fmsc_ties_to_larger,
            sample_weights,
            mu_hat: 0.0,
        };
        if ctx.sample_weights.is_empty() {
            // FMSC-type rules: the sample criterion is the draw formula with τ̂ in place of ΨM + τ*
            let pb: Vec<f64> = ctx.cands.iter().map(|c| c.d.dot(&ctx.tau_hat)).collect();
            let mut w = vec![0.0; ctx.cands.len()];
            ctx.weights(&pb, &[], &mut w);
            ctx.sample_weights = w;
        }
        ctx.mu_hat = ctx.sample_weights.iter().zip(&ctx.estimates).map(|(w, e)| w * e).sum();
        Ok(ctx)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mu_hat(&self) -> f64 {
        self.mu_hat
    }

    pub fn tau_hat(&self) -> &DVector<f64> {
        &self.tau_hat
    }

    pub fn tau_cov(&self) -> &DMatrix<f64> {
        &self.tau_cov
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn candidate_ids(&self) -> Vec<&str> {
        self.cands.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn sample_weights(&self) -> &[f64] {
        &self.sample_weights
    }

    pub fn rule(&self) -> &WeightRule {
        &self.rule
    }

    /// Fills `out` with candidate weights given pseudo-bias inputs
    /// `pb_S = d_S·(Ψ̂M + τ*)` and limiting J-statistics `jv`.
    fn weights(&self, pb: &[f64], jv: &[f64], out: &mut [f64]) {
        let k = self.cands.len();
        out.iter_mut().for_each(|w| *w = 0.0);
        let bias = |i: usize| {
            let c = &self.cands[i];
            if c.unbiased {
                0.0
            } else {
                pb[i] * pb[i] - c.dvd
            }
        };
        match &self.rule {
            WeightRule::Fmsc | WeightRule::FmscPositivePart => {
                let pp = matches!(self.rule, WeightRule::FmscPositivePart);
                let mut best = 0;
                let mut best_v = f64::INFINITY;
                for i in 0..k {
                    let b = bias(i);
                    let v = if pp { b.max(0.0) } else { b } + self.cands[i].variance;
                    if v < best_v || (v == best_v && self.prefer_on_tie(i, best)) {
                        best = i;
                        best_v = v;
                    }
                }
                out[best] = 1.0;
            }
            WeightRule::MinAmseAverage => {
                let (a, b) = if self.cands[0].unbiased { (1, 0) } else { (0, 1) };
                let gap = self.cands[b].variance - self.cands[a].variance;
                let w = 1.0 / (1.0 + bias(a).max(0.0) / gap);
                out[a] = w;
                out[b] = 1.0 - w;
            }
            WeightRule::DownwardJ { .. } => {
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&x, &y| {
                    self.cands[y].size.cmp(&self.cands[x].size).then(self.cands[x].id.cmp(&self.cands[y].id))
                });
                let pick = order.iter().copied().find(|&i| jv[i] < self.j_crit[i]).unwrap_or(*order.last().unwrap());
                out[pick] = 1.0;
            }
            WeightRule::GmmMsc { .. } => {
                let mut best = 0;
                let mut best_v = f64::INFINITY;
                for i in 0..k {
                    let v = jv[i] - self.cands[i].df as f64 * self.kappa;
                    let better = v < best_v
                        || (v == best_v
                            && (self.cands[i].size > self.cands[best].size
                                || self.cands[i].size == self.cands[best].size && self.cands[i].id < self.cands[best].id));
                    if better {
                        best = i;
                        best_v = v;
                    }
                }
                out[best] = 1.0;
            }
            WeightRule::Fixed(w) => out.copy_from_slice(w),
        }
    }

    fn prefer_on_tie(&self, i: usize, incumbent: usize) -> bool {
        let (a, b) = (&self.cands[i], &self.cands[incumbent]);
        if a.size != b.size {
            return (a.size > b.size) == self.fmsc_ties_to_larger;
        }
        a.id < b.id
    }

    fn uses_j(&self) -> bool {
        matches!(self.rule, WeightRule::DownwardJ { .. } | WeightRule::GmmMsc { .. })
    }
}

fn indicator_at(k: usize, len: usize) -> Vec<f64> {
    let mut w = vec![0.0; len];
    w[k] = 1.0;
    w
}

fn check_min_amse(cands: &[Candidate]) -> Result<()> {
    if cands.len() != 2 || cands.iter().filter(|c| c.unbiased).count() != 1 {
        return Err(Error::Unsupported(
            "minimum-AMSE averaging needs one biased and one unbiased candidate".into(),
        ));
    }
    let (a, b) = if cands[0].unbiased { (&cands[1], &cands[0]) } else { (&cands[0], &cands[1]) };
    if !(b.variance > a.variance) {
        return Err(Error::DegenerateVariance(format!(
            "unbiased candidate variance {:.3e} does not exceed {:.3e}",
            b.variance, a.variance
        )));
    }
    Ok(())
}

/// `Ξ_S' Q_S Ξ_S` with `Q_S = Ω_S⁻¹ − Ω_S⁻¹F_S(F_S'Ω_S⁻¹F_S)⁻¹F_S'Ω_S⁻¹`, so that
/// the limiting J-statistic is `u' Q u` for `u = M + (0, τ)`.
fn j_limit_matrix(omega: &DMatrix<f64>, f_hat: &DMatrix<f64>, s: &MomentSet) -> Result<DMatrix<f64>> {
    let idx = s.included();
    let om_s = linalg::select_square(omega, idx);
    let om_inv = linalg::spd_inverse(&om_s, "Omega_S").unwrap_or_else(|_| {
        log::warn!("singular Omega_S for {}; using pseudo-inverse", s.id());
        linalg::pinv_symmetric(&om_s)
    });
    let f_s = DMatrix::from_fn(idx.len(), f_hat.ncols(), |i, j| f_hat[(idx[i], j)]);
    let a = &om_inv * &f_s;
    let mid = linalg::spd_inverse(&linalg::symmetrize(&(f_s.transpose() * &a)), "F_S' Omega_S^-1 F_S")?;
    let q_s = linalg::symmetrize(&(&om_inv - &a * mid * a.transpose()));
    let m = omega.nrows();
    let mut full = DMatrix::zeros(m, m);
    for (i, &ri) in idx.iter().enumerate() {
        for (j, &cj) in idx.iter().enumerate() {
            full[(ri, cj)] = q_s[(i, j)];
        }
    }
    Ok(full)
}

/// Per-draw quantities that do not depend on `τ*`.
pub struct DrawCache<'a> {
    ctx: &'a PostSelectionContext,
    draws: usize,
    /// `c_S · M_j`, row-major by draw.
    cm: Vec<f64>,
    /// `d_S · Ψ̂ M_j`.
    dpm: Vec<f64>,
    /// `M_j' Q M_j` per candidate.
    jm: Vec<f64>,
    /// Suspect block of `Q M_j`, `q` entries per candidate per draw.
    jg: Vec<f64>,
    /// Suspect-suspect blocks of `Q` per candidate.
    jr: Vec<DMatrix<f64>>,
}

impl<'a> DrawCache<'a> {
    pub fn new(ctx: &'a PostSelectionContext, m: &DMatrix<f64>) -> Result<Self> {
        let k = ctx.cands.len();
        let dim = ctx.p + ctx.q;
        if m.ncols() != dim {
            return Err(Error::Dimension(format!("draws have {} columns, expected {dim}", m.ncols())));
        }
        let draws = m.nrows();
        let cmat = DMatrix::from_fn(dim, k, |i, s| ctx.cands[s].c[i]);
        let dmat = DMatrix::from_fn(ctx.q, k, |i, s| ctx.cands[s].d[i]);
        let cm_m = m * &cmat;
        let dpm_m = m * (ctx.psi.transpose() * dmat);
        let mut cm = Vec::with_capacity(draws * k);
        let mut dpm = Vec::with_capacity(draws * k);
        for j in 0..draws {
            for s in 0..k {
                cm.push(cm_m[(j, s)]);
                dpm.push(dpm_m[(j, s)]);
            }
        }
        let (mut jm, mut jg, mut jr) = (Vec::new(), Vec::new(), Vec::new());
        if ctx.uses_j() {
            let qms: Vec<DMatrix<f64>> = ctx
                .cands
                .iter()
                .map(|c| m * c.q_full.as_ref().expect("J matrices present"))
                .collect();
            jm.reserve(draws * k);
            jg.reserve(draws * k * ctx.q);
            for j in 0..draws {
                for qm in &qms {
                    jm.push(qm.row(j).dot(&m.row(j)));
                    for t in 0..ctx.q {
                        jg.push(qm[(j, ctx.p + t)]);
                    }
                }
            }
            jr = ctx
                .cands
                .iter()
                .map(|c| c.q_full.as_ref().unwrap().view((ctx.p, ctx.p), (ctx.q, ctx.q)).into_owned())
                .collect();
        }
        Ok(Self { ctx, draws, cm, dpm, jm, jg, jr })
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// `Λ_j(τ*)` for every draw.
    pub fn lambda(&self, tau_star: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.draws];
        self.lambda_into(tau_star, &mut out);
        out
    }

    fn lambda_into(&self, tau_star: &DVector<f64>, out: &mut [f64]) {
        let ctx = self.ctx;
        let k = ctx.cands.len();
        let q = ctx.q;
        let dt: Vec<f64> = ctx.cands.iter().map(|c| c.d.dot(tau_star)).collect();
        let jquad: Vec<f64> = self.jr.iter().map(|r| (tau_star.transpose() * r * tau_star)[0]).collect();
        let mut pb = vec![0.0; k];
        let mut jv = if ctx.uses_j() { vec![0.0; k] } else { Vec::new() };
        let mut w = vec![0.0; k];
        for j in 0..self.draws {
            let base = j * k;
            for s in 0..k {
                pb[s] = self.dpm[base + s] + dt[s];
            }
            if ctx.uses_j() {
                for s in 0..k {
                    let g = &self.jg[(base + s) * q..(base + s + 1) * q];
                    let lin: f64 = g.iter().zip(tau_star.iter()).map(|(a, b)| a * b).sum();
                    jv[s] = self.jm[base + s] + 2.0 * lin + jquad[s];
                }
            }
            ctx.weights(&pb, &jv, &mut w);
            out[j] = (0..k).map(|s| w[s] * (self.cm[base + s] + dt[s])).sum();
        }
    }

    /// Equal-tailed empirical `α/2` and `1 − α/2` quantiles of `Λ(τ*)`.
    pub fn quantiles(&self, tau_star: &DVector<f64>, alpha: f64, buf: &mut Vec<f64>) -> (f64, f64) {
        buf.resize(self.draws, 0.0);
        self.lambda_into(tau_star, buf);
        buf.sort_unstable_by(|a, b| a.total_cmp(b));
        (quantile_sorted(buf, alpha / 2.0), quantile_sorted(buf, 1.0 - alpha / 2.0))
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(x: &[f64], prob: f64) -> f64 {
    let h = (x.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(x.len() - 1);
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Simulated `Λ_j(τ*)` for supplied draws `M` (rows).
pub fn lambda_draws(tau_star: &DVector<f64>, m: &DMatrix<f64>, ctx: &PostSelectionContext) -> Result<Vec<f64>> {
    if tau_star.len() != ctx.q {
        return Err(Error::Dimension(format!("tau* has length {}, expected {}", tau_star.len(), ctx.q)));
    }
    Ok(DrawCache::new(ctx, m)?.lambda(tau_star))
}

fn interval(ctx: &PostSelectionContext, a_min: f64, b_max: f64) -> (f64, f64) {
    let rn = (ctx.n as f64).sqrt();
    (ctx.mu_hat - b_max / rn, ctx.mu_hat - a_min / rn)
}

fn one_step_from_cache(cache: &DrawCache, alpha: f64, keep_diagnostics: bool) -> CiResult {
    let ctx = cache.ctx;
    let mut buf = Vec::new();
    let (a, b) = cache.quantiles(&ctx.tau_hat, alpha, &mut buf);
    let (lower, upper) = interval(ctx, a, b);
    CiResult {
        method: CiMethod::OneStep,
        estimate: ctx.mu_hat,
        lower,
        upper,
        alpha,
        delta: 0.0,
        draws_j: cache.draws,
        region_points: 1,
        diagnostics: keep_diagnostics.then(|| vec![RegionDiagnostic { tau_star: ctx.tau_hat.iter().cloned().collect(), a, b }]),
    }
}

fn two_step_from_cache(cache: &DrawCache, settings: &CiSettings) -> Result<CiResult> {
    let ctx = cache.ctx;
    let alpha = settings.alpha;
    let mut buf = Vec::new();
    let mut diag = Vec::new();
    let mut evaluated = 0usize;
    let mut eval = |t: &DVector<f64>, diag: &mut Vec<RegionDiagnostic>| {
        evaluated += 1;
        let (a, b) = cache.quantiles(t, alpha, &mut buf);
        if settings.keep_diagnostics {
            diag.push(RegionDiagnostic { tau_star: t.iter().cloned().collect(), a, b });
        }
        (a, b)
    };
    let (mut a_min, mut b_max) = eval(&ctx.tau_hat, &mut diag);
    if ctx.q == 1 {
        for t in tau_region(&ctx.tau_hat, &ctx.tau_cov, settings.delta, 0)? {
            let (a, b) = eval(&t, &mut diag);
            a_min = a_min.min(a);
            b_max = b_max.max(b);
        }
    } else {
        if ctx.q > 16 {
            return Err(Error::Unsupported(format!("region search supports at most 16 suspect moments, got {}", ctx.q)));
        }
        let (radius, l) = ellipsoid(&ctx.tau_cov, settings.delta)?;
        let to_tau = |s: &DVector<f64>| &ctx.tau_hat + &l * s * radius;
        let n_quasi = (settings.search_budget / 4).min(200);
        let mut seeds: Vec<(DVector<f64>, f64, f64)> = Vec::new();
        for t in tau_region(&ctx.tau_hat, &ctx.tau_cov, settings.delta, n_quasi)? {
            let (a, b) = eval(&t, &mut diag);
            let s = l.solve_lower_triangular(&(&t - &ctx.tau_hat)).unwrap_or_else(|| DVector::zeros(ctx.q)) / radius;
            a_min = a_min.min(a);
            b_max = b_max.max(b);
            seeds.push((s, a, b));
        }
        let seed_cost = seeds.len();
        let per_bound = settings.search_budget.saturating_sub(seed_cost);
        // lower bound: minimize a; upper bound: maximize b
        for upper in [false, true] {
            let mut order: Vec<usize> = (0..seeds.len()).collect();
            if upper {
                order.sort_by(|&x, &y| seeds[y].2.total_cmp(&seeds[x].2));
            } else {
                order.sort_by(|&x, &y| seeds[x].1.total_cmp(&seeds[y].1));
            }
            let starts: Vec<usize> = order.into_iter().take(3).collect();
            let mut budget = per_bound;
            for (i, &st) in starts.iter().enumerate() {
                let share = budget / (starts.len() - i);
                let mut local = share;
                let f0 = if upper { -seeds[st].2 } else { seeds[st].1 };
                let best = pattern_search(
                    ctx.q,
                    seeds[st].0.clone(),
                    f0,
                    &mut local,
                    |s| {
                        let (a, b) = eval(&to_tau(s), &mut diag);
                        if upper {
                            -b
                        } else {
                            a
                        }
                    },
                );
                budget -= share - local;
                if upper {
                    b_max = b_max.max(-best);
                } else {
                    a_min = a_min.min(best);
                }
            }
        }
    }
    let (lower, upper) = interval(ctx, a_min, b_max);
    Ok(CiResult {
        method: CiMethod::TwoStep,
        estimate: ctx.mu_hat,
        lower,
        upper,
        alpha,
        delta: settings.delta,
        draws_j: cache.draws,
        region_points: evaluated,
        diagnostics: settings.keep_diagnostics.then_some(diag),
    })
}

/// Compass search over the unit ball, minimizing `f`. Returns the best value.
fn pattern_search(
    q: usize,
    mut s: DVector<f64>,
    mut best: f64,
    budget: &mut usize,
    mut f: impl FnMut(&DVector<f64>) -> f64,
) -> f64 {
    let mut step = 0.25;
    while step > 1e-3 && *budget > 0 {
        let mut improved = false;
        'dirs: for k in 0..q {
            for sign in [1.0, -1.0] {
                if *budget == 0 {
                    break 'dirs;
                }
                let mut cand = s.clone();
                cand[k] += sign * step;
                let norm = cand.norm();
                if norm > 1.0 {
                    cand /= norm;
                }
                *budget -= 1;
                let v = f(&cand);
                if v < best {
                    best = v;
                    s = cand;
                    improved = true;
                    break 'dirs;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Two-step interval with coverage at least `1 − (α + δ)` in the limit.
pub fn two_step_ci(ctx: &PostSelectionContext, settings: &CiSettings) -> Result<CiResult> {
    settings.validate()?;
    let m = mvn_draws(&ctx.omega, settings.draws, settings.seed)?;
    two_step_from_cache(&DrawCache::new(ctx, &m)?, settings)
}

/// Interval that treats `τ̂` as the true `τ`.
pub fn one_step_ci(ctx: &PostSelectionContext, alpha: f64, draws: usize, seed: u64) -> Result<CiResult> {
    let settings = CiSettings { alpha, delta: 0.5, draws, seed, ..CiSettings::default() };
    settings.validate()?;
    let m = mvn_draws(&ctx.omega, draws, seed)?;
    Ok(one_step_from_cache(&DrawCache::new(ctx, &m)?, alpha, false))
}

/// One-step interval at level `one_step_alpha` and two-step interval from a
/// single set of draws.
pub fn one_and_two_step_ci(
    ctx: &PostSelectionContext,
    settings: &CiSettings,
    one_step_alpha: f64,
) -> Result<(CiResult, CiResult)> {
    settings.validate()?;
    if !(one_step_alpha > 0.0 && one_step_alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {one_step_alpha}")));
    }
    let m = mvn_draws(&ctx.omega, settings.draws, settings.seed)?;
    let cache = DrawCache::new(ctx, &m)?;
    Ok((
        one_step_from_cache(&cache, one_step_alpha, settings.keep_diagnostics),
        two_step_from_cache(&cache, settings)?,
    ))
}

/// Textbook interval `μ̂ ± z_{1−α/2} se` around an estimate.
pub fn naive_ci(selected: &EstimateResult, target: &Target, alpha: f64) -> Result<CiResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha = {alpha}")));
    }
    let grad = target.gradient(selected.beta.len())?;
    let vcov = DMatrix::from_fn(grad.len(), grad.len(), |i, j| selected.vcov[i][j]);
    let estimate = grad.dot(&selected.beta_vec());
    let se = (grad.transpose() * vcov * &grad)[0].max(0.0).sqrt();
    let z = normal_two_sided_critical(alpha)?;
    Ok(CiResult {
        method: CiMethod::Naive,
        estimate,
        lower: estimate - z * se,
        upper: estimate + z * se,
        alpha,
        delta: 0.0,
        draws_j: 0,
        region_points: 0,
        diagnostics: None,
    })
}
