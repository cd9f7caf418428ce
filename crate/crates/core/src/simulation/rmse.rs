//! RMSE and selection-frequency experiments.

use rayon::prelude::*;

use crate::averaging;
use crate::criteria;
use crate::data::{candidate_lattice, CandidateKind, CandidateMode, Dataset, MomentSet};
use crate::error::{Error, Result};
use crate::estimators;
use crate::fmsc::{self, Target};
use crate::inference::chi_sq_quantile;

use super::dgp::BETA_TRUE;
use super::rng::{substream, Purpose};
use super::{Design, DesignFamily, ExperimentConfig, Method, SimRow};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodOutcome {
    pub estimate: f64,
    /// For selectors: whether the estimator using the suspect moments was
    /// chosen (the full set, or OLS against TSLS).
    pub chose_full: Option<bool>,
}

fn candidates(family: DesignFamily, d: &Dataset) -> Result<Vec<MomentSet>> {
    match family {
        DesignFamily::OlsTsls => Ok(fmsc::ols_tsls_candidates(d)?.to_vec()),
        DesignFamily::ChooseIv => candidate_lattice(d.p(), d.q(), &CandidateMode::AllSubsets),
    }
}

fn is_full(d: &Dataset, s: &MomentSet) -> bool {
    match s.kind() {
        CandidateKind::OlsCandidate => true,
        CandidateKind::TslsCandidate => false,
        CandidateKind::IvSubset => s.len() == d.p() + d.q(),
    }
}

/// The OLS candidate's GMM estimate is OLS itself; computing it directly
/// keeps every method's OLS estimate bitwise identical.
fn candidate_estimate(d: &Dataset, s: &MomentSet) -> Result<f64> {
    let fit = if s.kind() == CandidateKind::OlsCandidate {
        estimators::fit_ols(d.y(), d.x())?
    } else {
        estimators::fit_candidate(d, s)?
    };
    Ok(fit.beta[0])
}

/// Estimate of `β` produced by `method` on one dataset.
pub fn evaluate_method(method: &Method, family: DesignFamily, d: &Dataset) -> Result<MethodOutcome> {
    if !method.supports(family) {
        return Err(Error::Unsupported(format!("method {method} on {}", family.label())));
    }
    let plain = |estimate: f64| MethodOutcome { estimate, chose_full: None };
    let selected = |d: &Dataset, s: &MomentSet| -> Result<MethodOutcome> {
        Ok(MethodOutcome { estimate: candidate_estimate(d, s)?, chose_full: Some(is_full(d, s)) })
    };
    let cands = candidates(family, d)?;
    let full = cands.iter().find(|s| is_full(d, s)).expect("full candidate");
    let valid = cands.iter().find(|s| !is_full(d, s) && s.len() == d.p()).expect("valid candidate");
    match method {
        Method::Ols => Ok(plain(estimators::fit_ols(d.y(), d.x())?.beta[0])),
        Method::Tsls => Ok(plain(estimators::fit_tsls(d.y(), d.x(), d.z1())?.beta[0])),
        Method::Valid => Ok(plain(candidate_estimate(d, valid)?)),
        Method::Full => Ok(plain(candidate_estimate(d, full)?)),
        Method::Fmsc | Method::FmscPositivePart => {
            let report = match family {
                DesignFamily::OlsTsls => fmsc::fmsc_ols_vs_tsls(d)?,
                DesignFamily::ChooseIv => fmsc::fmsc_choose_iv(d, &cands, &Target::Coefficient(0))?,
            };
            let row = if *method == Method::Fmsc { report.selected_row() } else { report.selected_pp_row() };
            let s = cands.iter().find(|s| s.id() == row.candidate).expect("reported candidate");
            Ok(MethodOutcome { estimate: row.estimate, chose_full: Some(is_full(d, s)) })
        }
        Method::Dhw { alpha } => {
            let crit = chi_sq_quantile(1, 1.0 - alpha)?;
            let res = criteria::dhw_test(d, crit)?;
            let s = if res.select_ols { &cands[0] } else { &cands[1] };
            selected(d, s)
        }
        Method::GmmMsc(p) => selected(d, &criteria::gmm_msc_select(d, &cands, *p)?.0),
        Method::DownwardJ { alpha } => selected(d, &criteria::downward_j_select(d, &cands, *alpha)?),
        Method::Ccic(p) => selected(d, &criteria::ccic_select(d, &cands, *p)?.0),
        Method::Combined(p) => selected(d, &criteria::combined_select(d, &cands, *p)?),
        Method::MinAmseAverage => Ok(plain(averaging::avg_ols_tsls(d)?.beta_avg)),
    }
}

fn one_rep(cfg: &ExperimentConfig, design: &Design, rep: usize) -> Vec<Option<MethodOutcome>> {
    let mut rng = substream(cfg.seed, &design.key(), rep as u64, Purpose::Data);
    let d = match design.generate(&mut rng) {
        Ok(d) => d,
        Err(e) => {
            log::debug!("{} rep {rep}: data generation failed: {e}", design.key());
            return vec![None; cfg.methods.len()];
        }
    };
    cfg.methods
        .iter()
        .map(|m| match evaluate_method(m, design.family(), &d) {
            Ok(o) if o.estimate.is_finite() => Some(o),
            Ok(_) => None,
            Err(e) => {
                log::debug!("{} rep {rep}: {m} failed: {e}", design.key());
                None
            }
        })
        .collect()
}

pub(crate) fn run_cell(cfg: &ExperimentConfig, design: &Design) -> Result<Vec<SimRow>> {
    let outcomes: Vec<Vec<Option<MethodOutcome>>> =
        (0..cfg.reps).into_par_iter().map(|rep| one_rep(cfg, design, rep)).collect();
    let mut rows = Vec::new();
    for (k, method) in cfg.methods.iter().enumerate() {
        let ok: Vec<MethodOutcome> = outcomes.iter().filter_map(|o| o[k]).collect();
        let failures = cfg.reps - ok.len();
        if failures as f64 > super::FAILURE_FLAG_FRACTION * cfg.reps as f64 {
            log::warn!("{} {method}: {failures} of {} replications failed", design.key(), cfg.reps);
        }
        let count = ok.len() as f64;
        let mse = ok.iter().map(|o| (o.estimate - BETA_TRUE).powi(2)).sum::<f64>() / count;
        let label = method.label();
        rows.push(SimRow::new(cfg, design, label.clone(), "rmse", mse.sqrt(), failures));
        if method.is_selector() {
            let full = ok.iter().filter(|o| o.chose_full == Some(true)).count() as f64 / count;
            rows.push(SimRow::new(cfg, design, label.clone(), "freq_full", full, failures));
            rows.push(SimRow::new(cfg, design, label, "freq_valid", 1.0 - full, failures));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::Penalty;
    use crate::simulation::{run_experiment, Experiment, Grid};

    fn small(exp: Experiment, reps: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(exp);
        cfg.reps = reps;
        cfg.grid = Grid { strength: vec![0.4], rho: vec![0.0, 0.3], n: vec![100], local: false };
        cfg
    }

    #[test]
    fn rows_have_expected_shape() {
        let cfg = small(Experiment::RmseOlsTsls, 20);
        let rows = run_experiment(&cfg).unwrap();
        let selectors = cfg.methods.iter().filter(|m| m.is_selector()).count();
        assert_eq!(rows.len(), 2 * (cfg.methods.len() + 2 * selectors));
        assert!(rows.iter().all(|r| r.pi == Some(0.4) && r.gamma.is_none() && r.failures == 0));
    }

    #[test]
    fn output_independent_of_method_list_and_threads() {
        let mut a = small(Experiment::RmseChooseIv, 30);
        a.methods = vec![Method::Valid, Method::Fmsc];
        let mut b = a.clone();
        b.methods = vec![Method::Fmsc, Method::GmmMsc(Penalty::Bic), Method::Valid];
        let ra = run_experiment(&a).unwrap();
        let rb = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_experiment(&b).unwrap());
        for r in &ra {
            let m = rb.iter().find(|x| x.method == r.method && x.metric == r.metric && x.rho == r.rho).unwrap();
            assert_eq!(r.value.to_bits(), m.value.to_bits());
        }
    }

    #[test]
    fn rmse_matches_direct_computation() {
        let cfg = small(Experiment::RmseOlsTsls, 15);
        let rows = run_experiment(&cfg).unwrap();
        let design = cfg.grid.cells(DesignFamily::OlsTsls).unwrap()[1];
        let mut sq = 0.0;
        for rep in 0..15 {
            let mut rng = substream(cfg.seed, &design.key(), rep, Purpose::Data);
            let d = design.generate(&mut rng).unwrap();
            let b = estimators::fit_ols(d.y(), d.x()).unwrap().beta[0];
            sq += (b - BETA_TRUE).powi(2);
        }
        let row = rows.iter().find(|r| r.rho == 0.3 && r.method == "ols" && r.metric == "rmse").unwrap();
        assert!((row.value - (sq / 15.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn selector_methods_pick_candidates_consistently() {
        let design = Design::new(DesignFamily::OlsTsls, 0.4, 0.2, 200).unwrap();
        let mut rng = substream(1, &design.key(), 0, Purpose::Data);
        let d = design.generate(&mut rng).unwrap();
        let ols = evaluate_method(&Method::Ols, DesignFamily::OlsTsls, &d).unwrap().estimate;
        let tsls = evaluate_method(&Method::Tsls, DesignFamily::OlsTsls, &d).unwrap().estimate;
        assert_eq!(evaluate_method(&Method::Full, DesignFamily::OlsTsls, &d).unwrap().estimate, ols);
        assert_eq!(evaluate_method(&Method::Valid, DesignFamily::OlsTsls, &d).unwrap().estimate, tsls);
        for m in [Method::Fmsc, Method::Dhw { alpha: 0.05 }, Method::GmmMsc(Penalty::Bic)] {
            let o = evaluate_method(&m, DesignFamily::OlsTsls, &d).unwrap();
            let expect = if o.chose_full.unwrap() { ols } else { tsls };
            assert_eq!(o.estimate, expect, "{m}");
        }
        assert!(evaluate_method(&Method::Ccic(Penalty::Bic), DesignFamily::OlsTsls, &d).is_err());
    }
}
