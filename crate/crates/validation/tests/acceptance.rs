//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. Pass criterion numbers as arguments
//! to run a subset, e.g. `cargo test -p fmsc-validation --test acceptance -- 1 2 9`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use fmsc_cli::app::run_args;
use fmsc_core::averaging::{amse_ols_tsls_average, omega_star};
use fmsc_core::criteria::{dhw_test, j_statistic, Penalty};
use fmsc_core::fmsc::{fmsc_ols_vs_tsls, ols_vs_tsls_closed_form};
use fmsc_core::simulation::dgp::{gen_choose_iv, gen_ols_tsls, ChooseIvDesign, OlsTslsDesign};
use fmsc_core::simulation::{run_experiment, Experiment, ExperimentConfig, Grid, Method, SimRow};
use fmsc_core::{Dataset, MomentSet};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Rows of a simulation table keyed by `(strength, rho, n, method, metric)`.
struct Table(BTreeMap<(String, String, usize, String, String), f64>);

impl Table {
    fn new(rows: &[SimRow]) -> Self {
        let mut m = BTreeMap::new();
        for r in rows {
            let s = r.pi.or(r.gamma).expect("strength");
            m.insert((key(s), key(r.rho), r.n, r.method.clone(), r.metric.clone()), r.value);
        }
        Table(m)
    }

    fn get(&self, s: f64, rho: f64, n: usize, method: &str, metric: &str) -> f64 {
        *self
            .0
            .get(&(key(s), key(rho), n, method.to_string(), metric.to_string()))
            .unwrap_or_else(|| panic!("missing row {s} {rho} {n} {method} {metric}"))
    }
}

fn key(v: f64) -> String {
    format!("{v:.6}")
}

fn run(experiment: Experiment, grid: Grid, methods: Vec<Method>) -> Vec<SimRow> {
    let mut cfg = ExperimentConfig::new(experiment);
    cfg.grid = grid;
    cfg.methods = methods;
    cfg.reps = 2000;
    cfg.draws = 1000;
    run_experiment(&cfg).expect("experiment")
}

fn grid(strength: &[f64], rho: &[f64], n: &[usize]) -> Grid {
    Grid { strength: strength.to_vec(), rho: rho.to_vec(), n: n.to_vec(), local: false }
}

const PI: [f64; 3] = [0.2, 0.4, 0.6];
const RHO: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
const N: [usize; 3] = [50, 100, 500];

fn ols_tsls_datasets(count: usize) -> Vec<Dataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    (0..count)
        .map(|i| {
            let design = OlsTslsDesign::new(PI[i % 3], RHO[(i / 3) % 6], N[(i / 18) % 3]).unwrap();
            gen_ols_tsls(&design, &mut rng).unwrap()
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let data = ols_tsls_datasets(1000);
    let mut agree = 0;
    for d in &data {
        let fmsc_ols = fmsc_ols_vs_tsls(d).unwrap().selected == "OLS";
        let dhw_ols = dhw_test(d, 2.0).unwrap().select_ols;
        agree += usize::from(fmsc_ols == dhw_ols);
    }
    Outcome::new(agree == 1000, format!("{agree}/1000 selections agree with DHW at critical value 2"))
}

fn criterion_2() -> Outcome {
    let data = ols_tsls_datasets(1000);
    let mut worst: f64 = 0.0;
    for d in &data {
        let cf = ols_vs_tsls_closed_form(d).unwrap();
        let diff = cf.beta_ols - cf.beta_tsls;
        let rhs = d.n() as f64 * cf.sigma.sigma_x_sq.powi(2) * diff * diff;
        let lhs = cf.tau * cf.tau;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
    }
    Outcome::new(worst <= 1e-8, format!("max relative gap {worst:.2e} over 1000 datasets"))
}

fn tau_draws(design: &OlsTslsDesign, reps: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..reps)
        .map(|_| ols_vs_tsls_closed_form(&gen_ols_tsls(design, &mut rng).unwrap()).unwrap().tau)
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn criterion_3() -> Outcome {
    let (pi, rho, reps) = (0.6, 0.2, 5000);
    let small = OlsTslsDesign::new(pi, rho, 1000).unwrap();
    let large = OlsTslsDesign::new(pi, rho, 10_000).unwrap();
    let (m, v) = mean_var(&tau_draws(&small, reps, 31));
    let (m_big, v_big) = mean_var(&tau_draws(&large, reps, 32));
    // E[τ̂]/√n is the same drift at both sample sizes.
    let scale = (1000.0f64 / 10_000.0).sqrt();
    let target = m_big * scale;
    let se = (v / reps as f64 + v_big * scale * scale / reps as f64).sqrt();
    let mean_ok = (m - target).abs() <= 3.0 * se;
    let v_hat = small.sigma_v_sq() * 1.0 * 1.0 / small.gamma_sq();
    let var_ok = (v - v_hat).abs() <= 0.1 * v_hat;
    Outcome::new(
        mean_ok && var_ok,
        format!(
            "mean {m:.4} vs extrapolated {target:.4} (3 se = {:.4}, population {:.4}); variance {v:.4} vs V = {v_hat:.4}",
            3.0 * se,
            rho * 1000f64.sqrt()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(404);
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..50 {
        let sx = rng.random_range(0.5..3.0);
        let gamma_sq = sx * rng.random_range(0.05..0.95);
        let se = rng.random_range(0.2..3.0);
        let tau = rng.random_range(-5.0..5.0);
        let w = omega_star(tau, sx, se, gamma_sq).unwrap();
        let at_star = amse_ols_tsls_average(w, tau, sx, se, gamma_sq);
        let best_grid = (0..=1000)
            .map(|k| amse_ols_tsls_average(k as f64 / 1000.0, tau, sx, se, gamma_sq))
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max(at_star - best_grid);
    }
    Outcome::new(
        worst_gap <= 1e-10,
        format!("largest excess of AMSE(omega*) over the grid minimum: {worst_gap:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let methods = vec![Method::Ols, Method::Tsls, Method::Fmsc, Method::MinAmseAverage];
    let t = Table::new(&run(Experiment::RmseOlsTsls, grid(&PI, &RHO, &N), methods));
    let mut bad = Vec::new();
    for &pi in &PI {
        for &n in &N {
            let (ols, tsls) = (t.get(pi, 0.0, n, "ols", "rmse"), t.get(pi, 0.0, n, "tsls", "rmse"));
            if ols >= tsls {
                bad.push(format!("(a) pi={pi} n={n}: OLS {ols:.4} >= TSLS {tsls:.4}"));
            }
            let (mut fmsc_worst, mut avg_worst) = (0.0f64, 0.0f64);
            for &rho in &RHO {
                let ols = t.get(pi, rho, n, "ols", "rmse");
                let tsls = t.get(pi, rho, n, "tsls", "rmse");
                let fmsc = t.get(pi, rho, n, "fmsc", "rmse");
                if fmsc > 1.02 * ols.max(tsls) {
                    bad.push(format!("(c) pi={pi} rho={rho} n={n}: FMSC {fmsc:.4} > 1.02 max {:.4}", ols.max(tsls)));
                }
                fmsc_worst = fmsc_worst.max(fmsc);
                avg_worst = avg_worst.max(t.get(pi, rho, n, "min_amse_avg", "rmse"));
            }
            if avg_worst > 1.02 * fmsc_worst {
                bad.push(format!("(d) pi={pi} n={n}: averaging worst {avg_worst:.4} > 1.02 FMSC worst {fmsc_worst:.4}"));
            }
        }
    }
    let (ols, tsls) = (t.get(0.6, 0.5, 500, "ols", "rmse"), t.get(0.6, 0.5, 500, "tsls", "rmse"));
    if tsls >= ols {
        bad.push(format!("(b) TSLS {tsls:.4} >= OLS {ols:.4}"));
    }
    let detail = if bad.is_empty() { "(a)-(d) hold on all 54 cells".to_string() } else { bad.join("; ") };
    Outcome::new(bad.is_empty(), detail)
}

fn criterion_6(choose_iv: &Table) -> Outcome {
    let (pis, rhos, ns) = ([0.2, 0.6], [0.0, 0.2, 0.4], [100, 500]);
    let t = Table::new(&run(Experiment::CoverageOlsTsls, grid(&pis, &rhos, &ns), vec![Method::Fmsc]));
    let mut bad = Vec::new();
    let mut notes = Vec::new();
    let mut lowest = f64::INFINITY;
    let mut naive_min = f64::INFINITY;
    for &pi in &pis {
        for &rho in &rhos {
            for &n in &ns {
                let c = t.get(pi, rho, n, "fmsc_two_step", "coverage_pct");
                lowest = lowest.min(c);
                if c < 88.5 {
                    bad.push(format!("(a) pi={pi} rho={rho} n={n}: {c:.1}%"));
                }
                if n == 500 && c < 92.0 {
                    notes.push(format!("flag: pi={pi} rho={rho} n=500 two-step {c:.1}% < 92%"));
                }
                naive_min = naive_min.min(t.get(pi, rho, n, "fmsc_naive", "coverage_pct"));
            }
        }
    }
    let worst = choose_iv.get(0.6, 0.5, 50, "fmsc_two_step", "coverage_pct");
    if !(78.0..=84.0).contains(&worst) {
        bad.push(format!("(b) choose-IV N=50 gamma=0.6 rho=0.5 two-step coverage {worst:.1}% outside [78, 84]"));
    }
    if naive_min >= 80.0 {
        bad.push(format!("(c) lowest naive coverage {naive_min:.1}% >= 80%"));
    }
    let mut detail = format!(
        "lowest OLS/TSLS two-step {lowest:.1}%; choose-IV worst cell {worst:.1}%; lowest naive {naive_min:.1}%"
    );
    for s in bad.iter().chain(&notes) {
        detail.push_str("; ");
        detail.push_str(s);
    }
    Outcome::new(bad.is_empty(), detail)
}

fn criterion_7(choose_iv: &Table) -> Outcome {
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0);
    for &g in &PI {
        for &rho in &RHO {
            for &n in &N {
                let w = choose_iv.get(g, rho, n, "fmsc_two_step", "rel_width_pct");
                if w > worst.0 {
                    worst = (w, g, rho, n);
                }
            }
        }
    }
    let (w, g, rho, n) = worst;
    Outcome::new(w <= 30.0, format!("largest two-step width excess {w:.1}% at gamma={g} rho={rho} N={n}"))
}

fn criterion_8() -> Outcome {
    let g = Grid { strength: vec![0.4], rho: vec![4.0], n: vec![100, 10_000], local: true };
    let rows = run(Experiment::RmseChooseIv, g, vec![Method::GmmMsc(Penalty::Bic)]);
    let freq = |n: usize| {
        rows.iter().find(|r| r.n == n && r.metric == "freq_full").map(|r| r.value).expect("freq_full row")
    };
    let (small, large) = (freq(100), freq(10_000));
    let gap = 100.0 * (large - small);
    Outcome::new(
        gap >= 10.0,
        format!("GMM-BIC full-set frequency {:.1}% at N=100, {:.1}% at N=10000 (gap {gap:.1}pp)", 100.0 * small, 100.0 * large),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(909);
    let design = ChooseIvDesign::new(0.4, 0.2, 200).unwrap();
    let (mut just_worst, mut scale_worst) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = gen_choose_iv(&design, &mut rng).unwrap();
        let z1 = d.z1().columns(0, 1).into_owned();
        let just = Dataset::new(d.y().clone(), d.x().clone(), z1, d.z2().clone()).unwrap();
        just_worst = just_worst.max(j_statistic(&just, &MomentSet::valid(1)).unwrap().value.abs());

        let scales = [3.0, 0.01, 250.0];
        let mut z1s = d.z1().clone();
        for (j, s) in scales.iter().enumerate() {
            z1s.column_mut(j).scale_mut(*s);
        }
        let z2s: DMatrix<f64> = d.z2() * -7.5;
        let scaled = Dataset::new(d.y().clone(), d.x().clone(), z1s, z2s).unwrap();
        for s in [MomentSet::valid(3), MomentSet::full(3, 1)] {
            let a = j_statistic(&d, &s).unwrap().value;
            let b = j_statistic(&scaled, &s).unwrap().value;
            scale_worst = scale_worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    Outcome::new(
        just_worst < 1e-8 && scale_worst < 1e-8,
        format!("largest just-identified J {just_worst:.2e}; largest rescaling gap {scale_worst:.2e}"),
    )
}

fn criterion_10() -> Outcome {
    let rows = run(Experiment::CriteriaCompare, grid(&PI, &RHO, &N), vec![Method::Combined(Penalty::Bic)]);
    let freqs: Vec<&SimRow> = rows.iter().filter(|r| r.metric == "freq_valid").collect();
    let low = freqs.iter().filter(|r| r.value <= 0.95).count();
    let min = freqs.iter().min_by(|a, b| a.value.total_cmp(&b.value)).expect("rows");
    let mean = freqs.iter().map(|r| r.value).sum::<f64>() / freqs.len() as f64;
    Outcome::new(
        low == 0,
        format!(
            "combined BIC valid-set frequency: mean {:.1}%, min {:.1}% (gamma={} rho={} N={}); {low}/{} cells at or below 95%",
            100.0 * mean,
            100.0 * min.value,
            min.gamma.unwrap_or(f64::NAN),
            min.rho,
            min.n,
            freqs.len()
        ),
    )
}

fn fmsc(dir: &Path, args: &[&str]) {
    let mut argv = vec!["fmsc".to_string()];
    for a in args {
        argv.push(if a.ends_with(".csv") || a.ends_with(".toml") || a.ends_with(".json") {
            dir.join(a).display().to_string()
        } else {
            a.to_string()
        });
    }
    if let Err(e) = run_args(&argv) {
        panic!("fmsc {args:?} failed: {e}");
    }
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let files = [
        "data.csv",
        "cfg.toml",
        "o.csv",
        "report.json",
        "report.csv",
        "report.intervals.csv",
        "rmse.csv",
        "coverage.json",
        "compare.csv",
    ];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for f in files {
            let _ = std::fs::remove_file(p.join(f));
        }
        fmsc(p, &["fixture", "--design", "choose-iv", "--strength", "0.4", "--rho", "0.1", "--n", "300",
            "--seed", "5", "--out", "data.csv", "--config-out", "cfg.toml"]);
        fmsc(p, &["fixture", "--design", "ols-tsls", "--strength", "0.4", "--rho", "0.1", "--n", "100", "--out", "o.csv"]);
        fmsc(p, &["analyze", "--config", "cfg.toml", "--draws-J", "500", "--out", "report.json", "--format", "json"]);
        fmsc(p, &["analyze", "--config", "cfg.toml", "--draws-J", "500", "--out", "report.csv", "--format", "csv"]);
        fmsc(p, &["simulate", "rmse-ols-tsls", "--reps", "50", "--seed", "7", "--cells", "N=50", "--out", "rmse.csv"]);
        fmsc(p, &["simulate", "coverage-choose-iv", "--reps", "20", "--draws-J", "200",
            "--cells", "N=50,gamma=0.6,rho=0.5", "--format", "json", "--out", "coverage.json"]);
        fmsc(p, &["simulate", "criteria-compare", "--reps", "20", "--cells", "N=100,rho=0.2", "--out", "compare.csv"]);
        snapshots.push(files.map(|f| std::fs::read(p.join(f)).unwrap()));
    }
    let mismatched: Vec<&str> = files
        .iter()
        .zip(snapshots[0].iter().zip(&snapshots[1]))
        .filter(|(_, (a, b))| a != b || a.is_empty())
        .map(|(f, _)| *f)
        .collect();
    Outcome::new(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} outputs byte-identical across reruns", files.len())
        } else {
            format!("differing or empty outputs: {}", mismatched.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let choose_iv = (on(6) || on(7)).then(|| {
        let t = Instant::now();
        let rows = run(Experiment::CoverageChooseIv, grid(&PI, &RHO, &N), vec![Method::Fmsc]);
        eprintln!("choose-IV coverage grid finished in {:.0?}", t.elapsed());
        Table::new(&rows)
    });
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "FMSC equals DHW at critical value 2", Box::new(criterion_1)),
        (2, "tau-hat identity", Box::new(criterion_2)),
        (3, "tau-hat sampling distribution", Box::new(criterion_3)),
        (4, "optimal averaging weight", Box::new(criterion_4)),
        (5, "RMSE regime pattern", Box::new(criterion_5)),
        (6, "post-selection coverage", Box::new(|| criterion_6(choose_iv.as_ref().unwrap()))),
        (7, "two-step width", Box::new(|| criterion_7(choose_iv.as_ref().unwrap()))),
        (8, "consistent criterion limit", Box::new(criterion_8)),
        (9, "J-statistic properties", Box::new(criterion_9)),
        (10, "combined GMM/CCIC criteria", Box::new(criterion_10)),
        (11, "determinism", Box::new(criterion_11)),
    ];
    let mut failed = Vec::new();
    for (k, name, check) in &criteria {
        if !on(*k) {
            continue;
        }
        let t = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {k:>2} [{verdict}] {name}: {} ({:.1?})", o.detail, t.elapsed());
        if !o.pass {
            failed.push(*k);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
