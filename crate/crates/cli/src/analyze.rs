//! CSV-driven analysis: candidate estimates, FMSC tables and
//! post-selection intervals for the FMSC-selected estimator.

use std::io::Write;
use std::path::{Path, PathBuf};

use fmsc_core::data::{candidate_lattice, CandidateMode, SuspectBlock};
use fmsc_core::estimators::fit_candidate;
use fmsc_core::fmsc::fmsc_choose_iv;
use fmsc_core::inference::{naive_ci, one_and_two_step_ci, CiResult, CiSettings, PostSelectionContext, WeightRule};
use fmsc_core::linalg::{check_full_column_rank, hcat};
use fmsc_core::{Dataset, Target};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, CiSpec, Format, ModeSpec};
use crate::error::{io_err, CliError, CliResult};

/// Named numeric columns read from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Reads a headed CSV of numbers. Empty cells are rejected.
pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    parse_table(file, &path.display().to_string())
}

pub fn parse_table<R: std::io::Read>(reader: R, origin: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, field) in record.iter().enumerate() {
            let err = |message: String| CliError::Parse {
                path: origin.into(),
                line,
                column: headers[j].clone(),
                message,
            };
            if field.is_empty() {
                return Err(err("missing value".into()));
            }
            let v: f64 = field.parse().map_err(|_| err(format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(err(format!("'{field}' is not finite")));
            }
            columns[j].push(v);
        }
    }
    Ok(Table { headers, columns })
}

fn gather(table: &Table, names: &[String], origin: &str) -> CliResult<DMatrix<f64>> {
    let n = table.rows();
    let mut m = DMatrix::zeros(n, names.len());
    for (j, name) in names.iter().enumerate() {
        let col = table.column(name).ok_or_else(|| CliError::Config {
            path: origin.into(),
            message: format!("column '{name}' not found in input"),
        })?;
        m.column_mut(j).copy_from_slice(col);
    }
    Ok(m)
}

/// Assembles the dataset and suspect blocks, naming the offending block
/// when instruments are collinear.
pub fn build_dataset(cfg: &AnalysisConfig, table: &Table) -> CliResult<(Dataset, Vec<SuspectBlock>)> {
    let origin = cfg.input.display().to_string();
    let n = table.rows();
    let y = DVector::from_column_slice(gather(table, std::slice::from_ref(&cfg.outcome), &origin)?.as_slice());
    let mut x = gather(table, &cfg.regressors, &origin)?;
    let mut z1 = gather(table, &cfg.baseline_instruments, &origin)?;
    if cfg.intercept {
        let ones = DMatrix::from_element(n, 1, 1.0);
        x = hcat(&ones, &x);
        z1 = hcat(&ones, &z1);
    }
    check_full_column_rank(&z1, "baseline instruments")?;
    let mut blocks = Vec::new();
    let mut z2 = DMatrix::zeros(n, 0);
    for b in &cfg.suspect_blocks {
        let zb = gather(table, &b.columns, &origin)?;
        check_full_column_rank(&hcat(&z1, &zb), &format!("baseline instruments with suspect block '{}'", b.name))?;
        let start = z2.ncols();
        z2 = hcat(&z2, &zb);
        blocks.push(SuspectBlock { name: b.name.clone(), indices: (start..start + b.columns.len()).collect() });
    }
    Ok((Dataset::new(y, x, z1, z2)?, blocks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub candidate: String,
    pub moments: usize,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub fmsc: f64,
    pub fmsc_pp: f64,
    pub selected: bool,
    pub selected_pp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub method: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage.
    pub level: f64,
    pub alpha: f64,
    pub delta: f64,
    pub draws_j: usize,
    pub region_points: usize,
}

impl IntervalRow {
    fn from_ci(ci: &CiResult, level: f64) -> Self {
        Self {
            method: ci.method.label().into(),
            estimate: ci.estimate,
            lower: ci.lower,
            upper: ci.upper,
            level,
            alpha: ci.alpha,
            delta: ci.delta,
            draws_j: ci.draws_j,
            region_points: ci.region_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub target: String,
    pub n: usize,
    pub baseline_instruments: usize,
    pub suspect_instruments: usize,
    /// Nominal coverage of every reported interval, `1 − (α + δ)`.
    pub level: f64,
    pub tau: Vec<f64>,
    pub tau_cov: Vec<Vec<f64>>,
    pub selected: String,
    pub selected_pp: String,
    pub candidates: Vec<CandidateRow>,
    pub intervals: Vec<IntervalRow>,
    pub ci: CiSpec,
}

pub fn analyze(cfg: &AnalysisConfig) -> CliResult<AnalysisReport> {
    let table = read_table(&cfg.input)?;
    analyze_table(cfg, &table)
}

pub fn analyze_table(cfg: &AnalysisConfig, table: &Table) -> CliResult<AnalysisReport> {
    let (d, blocks) = build_dataset(cfg, table)?;
    let mode = match cfg.candidate_mode {
        ModeSpec::Blocks => CandidateMode::Blocks(blocks),
        ModeSpec::AllSubsets => {
            let names = cfg.suspect_blocks.iter().flat_map(|b| b.columns.iter());
            CandidateMode::Blocks(
                names.enumerate().map(|(j, c)| SuspectBlock { name: c.clone(), indices: vec![j] }).collect(),
            )
        }
    };
    let cands = candidate_lattice(d.p(), d.q(), &mode)?;
    let offset = usize::from(cfg.intercept);
    let coef = offset + cfg.regressors.iter().position(|r| r == &cfg.target).expect("validated target");
    let target = Target::Coefficient(coef);
    let miss = cfg.ci.alpha + cfg.ci.delta;

    let report = fmsc_choose_iv(&d, &cands, &target)?;
    let mut rows = Vec::with_capacity(cands.len());
    for (s, r) in cands.iter().zip(&report.candidates) {
        let fit = fit_candidate(&d, s)?;
        let ci = naive_ci(&fit, &target, miss)?;
        rows.push(CandidateRow {
            candidate: r.candidate.clone(),
            moments: r.moments,
            estimate: r.estimate,
            se: fit.se[coef],
            lower: ci.lower,
            upper: ci.upper,
            bias_sq: r.bias_sq,
            variance: r.variance,
            fmsc: r.fmsc,
            fmsc_pp: r.fmsc_pp,
            selected: r.selected,
            selected_pp: r.selected_pp,
        });
    }

    let sel = cands.iter().position(|s| s.id() == report.selected).expect("selected candidate");
    let naive = naive_ci(&fit_candidate(&d, &cands[sel])?, &target, miss)?;
    let ctx = PostSelectionContext::choose_iv(&d, &cands, &target, WeightRule::Fmsc)?;
    let settings = CiSettings {
        alpha: cfg.ci.alpha,
        delta: cfg.ci.delta,
        draws: cfg.ci.draws,
        seed: cfg.ci.seed,
        search_budget: cfg.ci.search_budget,
        keep_diagnostics: false,
    };
    let (one, two) = one_and_two_step_ci(&ctx, &settings, miss)?;

    Ok(AnalysisReport {
        target: cfg.target.clone(),
        n: d.n(),
        baseline_instruments: d.p(),
        suspect_instruments: d.q(),
        level: 1.0 - miss,
        tau: report.tau.clone(),
        tau_cov: report.tau_cov.clone(),
        selected: report.selected.clone(),
        selected_pp: report.selected_pp.clone(),
        candidates: rows,
        intervals: [naive, one, two].iter().map(|c| IntervalRow::from_ci(c, 1.0 - miss)).collect(),
        ci: cfg.ci.clone(),
    })
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Argument(e.to_string()))
}

/// Companion path for the interval table in CSV mode.
pub fn intervals_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.intervals.csv"))
}

/// JSON writes one document. CSV writes the candidate table to `out` and
/// the interval table next to it, or both to stdout separated by a blank line.
pub fn write_report(report: &AnalysisReport, format: Format, out: Option<&Path>) -> CliResult<()> {
    match (format, out) {
        (Format::Json, _) => {
            let mut text = serde_json::to_string_pretty(report)?;
            text.push('\n');
            write_bytes(out, text.as_bytes())
        }
        (Format::Csv, Some(path)) => {
            write_bytes(Some(path), &csv_bytes(&report.candidates)?)?;
            write_bytes(Some(&intervals_path(path)), &csv_bytes(&report.intervals)?)
        }
        (Format::Csv, None) => {
            let mut all = csv_bytes(&report.candidates)?;
            all.push(b'\n');
            all.extend(csv_bytes(&report.intervals)?);
            write_bytes(None, &all)
        }
    }
}

pub(crate) fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(io_err(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(io_err("<stdout>"))
        }
    }
}
