//! The `simulate` command: grid overrides and table output.

use std::path::Path;

use fmsc_core::simulation::{run_experiment, DesignFamily, Experiment, ExperimentConfig, Method, SimRow};

use crate::analyze::write_bytes;
use crate::config::Format;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulateOptions {
    /// `key=value` lists; keys `n`, `pi`, `gamma`, `rho` and `tau`.
    pub cells: Vec<String>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub draws: Option<usize>,
    pub methods: Option<String>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Argument(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| bad(format!("cannot parse {key}={v}")))
}

/// Replaces grid axes named in `specs`; repeated keys accumulate values.
/// `tau=` switches to the local design `ρ = τ/√n`.
fn apply_cells(cfg: &mut ExperimentConfig, specs: &[String]) -> CliResult<()> {
    let family = cfg.experiment.family();
    let (mut strength, mut rho, mut tau, mut n) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for spec in specs {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| bad(format!("expected key=value, got '{part}'")))?;
            match (key.trim().to_ascii_lowercase().as_str(), family) {
                ("n", _) => n.push(num::<usize>(key, value)?),
                ("rho", _) => rho.push(num::<f64>(key, value)?),
                ("tau", _) => tau.push(num::<f64>(key, value)?),
                ("pi", DesignFamily::OlsTsls) | ("gamma", DesignFamily::ChooseIv) => {
                    strength.push(num::<f64>(key, value)?)
                }
                (k, _) => return Err(bad(format!("unknown cell key '{k}' for {}", cfg.experiment))),
            }
        }
    }
    if !rho.is_empty() && !tau.is_empty() {
        return Err(bad("give either rho or tau, not both"));
    }
    if !strength.is_empty() {
        cfg.grid.strength = strength;
    }
    if !rho.is_empty() {
        cfg.grid.rho = rho;
    }
    if !tau.is_empty() {
        cfg.grid.rho = tau;
        cfg.grid.local = true;
    }
    if !n.is_empty() {
        cfg.grid.n = n;
    }
    Ok(())
}

pub fn build_config(experiment: &str, opts: &SimulateOptions) -> CliResult<ExperimentConfig> {
    let experiment: Experiment = experiment.parse()?;
    let mut cfg = ExperimentConfig::new(experiment);
    apply_cells(&mut cfg, &opts.cells)?;
    if let Some(r) = opts.reps {
        cfg.reps = r;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(a) = opts.alpha {
        cfg.alpha = a;
    }
    if let Some(d) = opts.delta {
        cfg.delta = d;
    }
    if let Some(j) = opts.draws {
        cfg.draws = j;
    }
    if let Some(m) = &opts.methods {
        cfg.methods = m.split(',').map(|s| s.trim().parse::<Method>()).collect::<Result<_, _>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(experiment: &str, opts: &SimulateOptions) -> CliResult<Vec<SimRow>> {
    let cfg = build_config(experiment, opts)?;
    log::info!(
        "{}: {} cells x {} reps, seed {}",
        cfg.experiment,
        cfg.grid.cells(cfg.experiment.family())?.len(),
        cfg.reps,
        cfg.seed
    );
    Ok(run_experiment(&cfg)?)
}

pub fn rows_to_bytes(rows: &[SimRow], format: Format) -> CliResult<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner().map_err(|e| bad(e.to_string()))
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(rows)?;
            v.push(b'\n');
            Ok(v)
        }
    }
}

pub fn write_rows(rows: &[SimRow], format: Format, out: Option<&Path>) -> CliResult<()> {
    write_bytes(out, &rows_to_bytes(rows, format)?)
}
