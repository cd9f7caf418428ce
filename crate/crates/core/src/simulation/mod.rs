//! Monte Carlo designs and experiments.
//!
//! An experiment runs every method over every cell of a design grid. Each
//! (cell, replication) pair gets its own random substream, replications run
//! in parallel and results are reduced in replication order, so output
//! depends only on the configuration.

pub mod coverage;
pub mod dgp;
pub mod rmse;
pub mod rng;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::Penalty;
use crate::data::Dataset;
use crate::error::{Error, Result};
use dgp::{ChooseIvDesign, OlsTslsDesign};

pub use coverage::CoverageOutcome;
pub use rmse::{evaluate_method, MethodOutcome};

/// Replications whose failure share exceeds this are flagged.
pub const FAILURE_FLAG_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignFamily {
    OlsTsls,
    ChooseIv,
}

impl DesignFamily {
    pub fn label(&self) -> &'static str {
        match self {
            DesignFamily::OlsTsls => "ols_tsls",
            DesignFamily::ChooseIv => "choose_iv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Design {
    OlsTsls(OlsTslsDesign),
    ChooseIv(ChooseIvDesign),
}

impl Design {
    pub fn new(family: DesignFamily, strength: f64, rho: f64, n: usize) -> Result<Self> {
        Ok(match family {
            DesignFamily::OlsTsls => Design::OlsTsls(OlsTslsDesign::new(strength, rho, n)?),
            DesignFamily::ChooseIv => Design::ChooseIv(ChooseIvDesign::new(strength, rho, n)?),
        })
    }

    pub fn family(&self) -> DesignFamily {
        match self {
            Design::OlsTsls(_) => DesignFamily::OlsTsls,
            Design::ChooseIv(_) => DesignFamily::ChooseIv,
        }
    }

    /// `π` for OLS versus TSLS, `γ` for instrument selection.
    pub fn strength(&self) -> f64 {
        match self {
            Design::OlsTsls(d) => d.pi,
            Design::ChooseIv(d) => d.gamma,
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            Design::OlsTsls(d) => d.rho,
            Design::ChooseIv(d) => d.rho,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Design::OlsTsls(d) => d.n,
            Design::ChooseIv(d) => d.n,
        }
    }

    /// Exact identity of the cell, used to key random substreams.
    pub fn key(&self) -> String {
        format!(
            "{}/{:016x}/{:016x}/{}",
            self.family().label(),
            self.strength().to_bits(),
            self.rho().to_bits(),
            self.n()
        )
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        match self {
            Design::OlsTsls(d) => dgp::gen_ols_tsls(d, rng),
            Design::ChooseIv(d) => dgp::gen_choose_iv(d, rng),
        }
    }
}

/// Cartesian grid of design cells. With `local` set, `rho` holds drift
/// values `τ` and each cell uses `ρ = τ/√n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub strength: Vec<f64>,
    pub rho: Vec<f64>,
    pub n: Vec<usize>,
    #[serde(default)]
    pub local: bool,
}

impl Grid {
    pub fn default_for(family: DesignFamily) -> Self {
        let strength = match family {
            DesignFamily::OlsTsls => vec![0.2, 0.4, 0.6],
            DesignFamily::ChooseIv => vec![0.2, 0.4, 0.6],
        };
        Self { strength, rho: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5], n: vec![50, 100, 500], local: false }
    }

    /// Cells ordered by strength, then `ρ`, then `n`.
    pub fn cells(&self, family: DesignFamily) -> Result<Vec<Design>> {
        if self.strength.is_empty() || self.rho.is_empty() || self.n.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        let mut out = Vec::with_capacity(self.strength.len() * self.rho.len() * self.n.len());
        for &s in &self.strength {
            for &r in &self.rho {
                for &n in &self.n {
                    let rho = if self.local { r / (n as f64).sqrt() } else { r };
                    out.push(Design::new(family, s, rho, n)?);
                }
            }
        }
        Ok(out)
    }
}

/// Estimators and selection procedures compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Ols,
    Tsls,
    /// Baseline instruments only.
    Valid,
    /// Every instrument.
    Full,
    Fmsc,
    FmscPositivePart,
    /// Durbin-Hausman-Wu pretest at level `alpha`.
    Dhw { alpha: f64 },
    GmmMsc(Penalty),
    DownwardJ { alpha: f64 },
    Ccic(Penalty),
    Combined(Penalty),
    MinAmseAverage,
}

fn penalty_tag(p: &Penalty) -> String {
    match p {
        Penalty::Bic => "bic".into(),
        Penalty::Hq => "hq".into(),
        Penalty::Aic => "aic".into(),
        Penalty::Fixed(k) => format!("k{k}"),
    }
}

fn parse_penalty(s: &str) -> Option<Penalty> {
    match s {
        "bic" => Some(Penalty::Bic),
        "hq" => Some(Penalty::Hq),
        "aic" => Some(Penalty::Aic),
        _ => s.strip_prefix('k').and_then(|k| k.parse().ok()).map(Penalty::Fixed),
    }
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ols => "ols".into(),
            Method::Tsls => "tsls".into(),
            Method::Valid => "valid".into(),
            Method::Full => "full".into(),
            Method::Fmsc => "fmsc".into(),
            Method::FmscPositivePart => "fmsc_pp".into(),
            Method::Dhw { alpha } => format!("dhw_{alpha}"),
            Method::GmmMsc(p) => format!("gmm_{}", penalty_tag(p)),
            Method::DownwardJ { alpha } => format!("downward_j_{alpha}"),
            Method::Ccic(p) => format!("ccic_{}", penalty_tag(p)),
            Method::Combined(p) => format!("combined_{}", penalty_tag(p)),
            Method::MinAmseAverage => "min_amse_avg".into(),
        }
    }

    pub fn supports(&self, family: DesignFamily) -> bool {
        match self {
            Method::Ols | Method::Tsls | Method::Dhw { .. } | Method::MinAmseAverage => family == DesignFamily::OlsTsls,
            Method::Ccic(_) | Method::Combined(_) => family == DesignFamily::ChooseIv,
            _ => true,
        }
    }

    /// Whether the method picks one candidate, so selection frequencies apply.
    pub fn is_selector(&self) -> bool {
        !matches!(self, Method::Ols | Method::Tsls | Method::Valid | Method::Full | Method::MinAmseAverage)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let level = |rest: &str| -> Result<f64> {
            let a: f64 = rest.parse().map_err(|_| Error::Config(format!("bad level in method {s}")))?;
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!("level in method {s} must lie in (0, 1)")));
            }
            Ok(a)
        };
        let m = match s {
            "ols" => Method::Ols,
            "tsls" => Method::Tsls,
            "valid" => Method::Valid,
            "full" => Method::Full,
            "fmsc" => Method::Fmsc,
            "fmsc_pp" => Method::FmscPositivePart,
            "min_amse_avg" => Method::MinAmseAverage,
            _ => {
                if let Some(rest) = s.strip_prefix("dhw_") {
                    Method::Dhw { alpha: level(rest)? }
                } else if let Some(rest) = s.strip_prefix("downward_j_") {
                    Method::DownwardJ { alpha: level(rest)? }
                } else if let Some(p) = s.strip_prefix("gmm_").and_then(parse_penalty) {
                    Method::GmmMsc(p)
                } else if let Some(p) = s.strip_prefix("ccic_").and_then(parse_penalty) {
                    Method::Ccic(p)
                } else if let Some(p) = s.strip_prefix("combined_").and_then(parse_penalty) {
                    Method::Combined(p)
                } else {
                    return Err(Error::Config(format!("unknown method {s}")));
                }
            }
        };
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RmseOlsTsls,
    RmseChooseIv,
    CoverageOlsTsls,
    CoverageChooseIv,
    CriteriaCompare,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::RmseOlsTsls,
        Experiment::RmseChooseIv,
        Experiment::CoverageOlsTsls,
        Experiment::CoverageChooseIv,
        Experiment::CriteriaCompare,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::RmseOlsTsls => "rmse-ols-tsls",
            Experiment::RmseChooseIv => "rmse-choose-iv",
            Experiment::CoverageOlsTsls => "coverage-ols-tsls",
            Experiment::CoverageChooseIv => "coverage-choose-iv",
            Experiment::CriteriaCompare => "criteria-compare",
        }
    }

    pub fn family(&self) -> DesignFamily {
        match self {
            Experiment::RmseOlsTsls | Experiment::CoverageOlsTsls => DesignFamily::OlsTsls,
            _ => DesignFamily::ChooseIv,
        }
    }

    pub fn is_coverage(&self) -> bool {
        matches!(self, Experiment::CoverageOlsTsls | Experiment::CoverageChooseIv)
    }

    pub fn default_methods(&self) -> Vec<Method> {
        use Method::*;
        match self {
            Experiment::RmseOlsTsls => vec![
                Ols,
                Tsls,
                Fmsc,
                FmscPositivePart,
                Dhw { alpha: 0.05 },
                Dhw { alpha: 0.1 },
                MinAmseAverage,
            ],
            Experiment::RmseChooseIv => {
                vec![Valid, Full, Fmsc, FmscPositivePart, GmmMsc(Penalty::Bic), DownwardJ { alpha: 0.05 }]
            }
            Experiment::CoverageOlsTsls => vec![Fmsc, MinAmseAverage],
            Experiment::CoverageChooseIv => vec![Fmsc],
            Experiment::CriteriaCompare => vec![
                Valid,
                Full,
                Fmsc,
                FmscPositivePart,
                GmmMsc(Penalty::Bic),
                GmmMsc(Penalty::Hq),
                GmmMsc(Penalty::Aic),
                DownwardJ { alpha: 0.05 },
                Ccic(Penalty::Bic),
                Ccic(Penalty::Hq),
                Combined(Penalty::Bic),
                Combined(Penalty::Hq),
            ],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub grid: Grid,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub delta: f64,
    pub draws: usize,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            grid: Grid::default_for(experiment.family()),
            reps: 2000,
            seed: 20_130_301,
            methods: experiment.default_methods(),
            alpha: 0.05,
            delta: 0.05,
            draws: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let family = self.experiment.family();
        for m in &self.methods {
            if !m.supports(family) {
                return Err(Error::Config(format!("method {m} does not apply to {}", family.label())));
            }
            if self.experiment.is_coverage() && coverage::weight_rule(m).is_none() {
                return Err(Error::Config(format!("method {m} has no post-selection interval")));
            }
        }
        if self.experiment.is_coverage() {
            if !(self.alpha > 0.0 && self.delta > 0.0 && self.alpha + self.delta < 1.0) {
                return Err(Error::Config(format!("need 0 < alpha, delta and alpha + delta < 1, got {} and {}", self.alpha, self.delta)));
            }
            if self.draws < 2 {
                return Err(Error::Config("need at least 2 simulation draws".into()));
            }
        }
        self.grid.cells(family)?;
        Ok(())
    }
}

/// One long-format output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub experiment: String,
    pub design: String,
    pub pi: Option<f64>,
    pub gamma: Option<f64>,
    pub rho: f64,
    pub n: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub reps: usize,
    pub failures: usize,
    pub flagged: bool,
}

impl SimRow {
    pub(crate) fn new(
        cfg: &ExperimentConfig,
        design: &Design,
        method: impl Into<String>,
        metric: &str,
        value: f64,
        failures: usize,
    ) -> Self {
        let (pi, gamma) = match design.family() {
            DesignFamily::OlsTsls => (Some(design.strength()), None),
            DesignFamily::ChooseIv => (None, Some(design.strength())),
        };
        let flagged = failures as f64 > FAILURE_FLAG_FRACTION * cfg.reps as f64;
        Self {
            experiment: cfg.experiment.name().into(),
            design: design.family().label().into(),
            pi,
            gamma,
            rho: design.rho(),
            n: design.n(),
            method: method.into(),
            metric: metric.into(),
            value,
            reps: cfg.reps,
            failures,
            flagged,
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SimRow>> {
    cfg.validate()?;
    let cells = cfg.grid.cells(cfg.experiment.family())?;
    let mut rows = Vec::new();
    for design in &cells {
        let cell_rows = if cfg.experiment.is_coverage() {
            coverage::run_cell(cfg, design)?
        } else {
            rmse::run_cell(cfg, design)?
        };
        rows.extend(cell_rows);
    }
    Ok(rows)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}
