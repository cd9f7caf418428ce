//! Coverage and width of post-selection intervals.
//!
//! Every interval targets nominal level `1 − (α + δ)`: the naive interval
//! around the selected estimator, the one-step interval, the two-step
//! interval with region level `δ` and quantile level `α`, and the textbook
//! interval for the valid estimator, which is the width benchmark.

use rayon::prelude::*;

use crate::data::{candidate_lattice, CandidateMode, Dataset, MomentSet};
use crate::error::{Error, Result};
use crate::estimators;
use crate::fmsc::{self, Target};
use crate::inference::{naive_ci, one_and_two_step_ci, CiResult, CiSettings, PostSelectionContext, WeightRule};

use super::dgp::BETA_TRUE;
use super::rng::{substream, subseed, Purpose};
use super::{median, Design, DesignFamily, ExperimentConfig, Method, SimRow};

/// The weight rule a method uses inside the interval simulation.
pub fn weight_rule(method: &Method) -> Option<WeightRule> {
    match method {
        Method::Fmsc => Some(WeightRule::Fmsc),
        Method::FmscPositivePart => Some(WeightRule::FmscPositivePart),
        Method::MinAmseAverage => Some(WeightRule::MinAmseAverage),
        Method::GmmMsc(p) => Some(WeightRule::GmmMsc { penalty: *p }),
        Method::DownwardJ { alpha } => Some(WeightRule::DownwardJ { alpha: *alpha }),
        _ => None,
    }
}

/// Intervals from one replication, `None` where a computation failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageOutcome {
    pub benchmark: Option<CiResult>,
    /// Per method: naive (selectors only), one-step and two-step intervals.
    pub methods: Vec<Option<[Option<CiResult>; 3]>>,
}

fn candidates(family: DesignFamily, d: &Dataset) -> Result<Vec<MomentSet>> {
    match family {
        DesignFamily::OlsTsls => Ok(fmsc::ols_tsls_candidates(d)?.to_vec()),
        DesignFamily::ChooseIv => candidate_lattice(d.p(), d.q(), &CandidateMode::AllSubsets),
    }
}

fn context(family: DesignFamily, d: &Dataset, cands: &[MomentSet], rule: WeightRule) -> Result<PostSelectionContext> {
    match family {
        DesignFamily::OlsTsls => PostSelectionContext::ols_vs_tsls(d, rule),
        DesignFamily::ChooseIv => PostSelectionContext::choose_iv(d, cands, &Target::Coefficient(0), rule),
    }
}

fn fit(d: &Dataset, s: &MomentSet) -> Result<crate::data::EstimateResult> {
    if s.kind() == crate::data::CandidateKind::OlsCandidate {
        estimators::fit_ols(d.y(), d.x())
    } else {
        estimators::fit_candidate(d, s)
    }
}

fn method_intervals(
    cfg: &ExperimentConfig,
    design: &Design,
    d: &Dataset,
    cands: &[MomentSet],
    method: &Method,
    rep: usize,
) -> Result<[Option<CiResult>; 3]> {
    let rule = weight_rule(method).ok_or_else(|| Error::Unsupported(format!("no interval for {method}")))?;
    let ctx = context(design.family(), d, cands, rule)?;
    let level = cfg.alpha + cfg.delta;
    let naive = if method.is_selector() {
        let k = ctx.sample_weights().iter().position(|&w| w == 1.0).expect("indicator weights");
        Some(naive_ci(&fit(d, &cands[k])?, &Target::Coefficient(0), level)?)
    } else {
        None
    };
    // the same simulation draws serve every method in a replication
    let settings = CiSettings {
        alpha: cfg.alpha,
        delta: cfg.delta,
        draws: cfg.draws,
        seed: subseed(cfg.seed, &design.key(), rep as u64, Purpose::CiDraws),
        ..CiSettings::default()
    };
    let (one, two) = one_and_two_step_ci(&ctx, &settings, level)?;
    Ok([naive, Some(one), Some(two)])
}

pub fn replicate(cfg: &ExperimentConfig, design: &Design, rep: usize) -> CoverageOutcome {
    let fail = |what: &str, e: Error| log::debug!("{} rep {rep}: {what} failed: {e}", design.key());
    let mut rng = substream(cfg.seed, &design.key(), rep as u64, Purpose::Data);
    let d = match design.generate(&mut rng) {
        Ok(d) => d,
        Err(e) => {
            fail("data generation", e);
            return CoverageOutcome { benchmark: None, methods: vec![None; cfg.methods.len()] };
        }
    };
    let level = cfg.alpha + cfg.delta;
    let benchmark = estimators::fit_tsls(d.y(), d.x(), d.z1())
        .and_then(|f| naive_ci(&f, &Target::Coefficient(0), level))
        .map_err(|e| fail("benchmark", e))
        .ok();
    let cands = match candidates(design.family(), &d) {
        Ok(c) => c,
        Err(e) => {
            fail("candidates", e);
            return CoverageOutcome { benchmark, methods: vec![None; cfg.methods.len()] };
        }
    };
    let methods = cfg
        .methods
        .iter()
        .map(|m| method_intervals(cfg, design, &d, &cands, m, rep).map_err(|e| fail(&m.label(), e)).ok())
        .collect();
    CoverageOutcome { benchmark, methods }
}

struct Summary {
    coverage_pct: f64,
    median_width: f64,
    failures: usize,
}

fn summarize(cis: &[Option<&CiResult>], reps: usize) -> Summary {
    let ok: Vec<&CiResult> = cis.iter().flatten().copied().filter(|c| c.lower.is_finite() && c.upper.is_finite()).collect();
    let covered = ok.iter().filter(|c| c.covers(BETA_TRUE)).count();
    let mut widths: Vec<f64> = ok.iter().map(|c| c.width()).collect();
    Summary {
        coverage_pct: 100.0 * covered as f64 / ok.len() as f64,
        median_width: median(&mut widths),
        failures: reps - ok.len(),
    }
}

pub(crate) fn run_cell(cfg: &ExperimentConfig, design: &Design) -> Result<Vec<SimRow>> {
    let outcomes: Vec<CoverageOutcome> =
        (0..cfg.reps).into_par_iter().map(|rep| replicate(cfg, design, rep)).collect();
    let mut rows = Vec::new();
    let mut push = |label: String, s: &Summary, bench_width: f64| {
        if s.failures as f64 > super::FAILURE_FLAG_FRACTION * cfg.reps as f64 {
            log::warn!("{} {label}: {} of {} replications failed", design.key(), s.failures, cfg.reps);
        }
        let rel = 100.0 * (s.median_width / bench_width - 1.0);
        rows.push(SimRow::new(cfg, design, label.clone(), "coverage_pct", s.coverage_pct, s.failures));
        rows.push(SimRow::new(cfg, design, label.clone(), "median_width", s.median_width, s.failures));
        rows.push(SimRow::new(cfg, design, label, "rel_width_pct", rel, s.failures));
    };
    let bench: Vec<Option<&CiResult>> = outcomes.iter().map(|o| o.benchmark.as_ref()).collect();
    let bench_summary = summarize(&bench, cfg.reps);
    let bench_label = match design.family() {
        DesignFamily::OlsTsls => "tsls_textbook",
        DesignFamily::ChooseIv => "valid_textbook",
    };
    push(bench_label.into(), &bench_summary, bench_summary.median_width);
    for (k, method) in cfg.methods.iter().enumerate() {
        for (slot, kind) in ["naive", "one_step", "two_step"].iter().enumerate() {
            if slot == 0 && !method.is_selector() {
                continue;
            }
            let cis: Vec<Option<&CiResult>> =
                outcomes.iter().map(|o| o.methods[k].as_ref().and_then(|m| m[slot].as_ref())).collect();
            push(format!("{}_{kind}", method.label()), &summarize(&cis, cfg.reps), bench_summary.median_width);
        }
    }
    Ok(rows)
}
