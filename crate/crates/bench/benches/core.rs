use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fmsc_bench::{choose_iv_fixture, ols_tsls_fixture};
use fmsc_core::criteria::{gmm_msc_select, j_statistic, Penalty};
use fmsc_core::data::{candidate_lattice, CandidateMode};
use fmsc_core::estimators::fit_tsls;
use fmsc_core::fmsc::{fmsc_choose_iv, fmsc_ols_vs_tsls};
use fmsc_core::inference::{two_step_ci, CiSettings, PostSelectionContext, WeightRule};
use fmsc_core::{MomentSet, Target};

fn estimators(c: &mut Criterion) {
    let mut g = c.benchmark_group("tsls");
    for n in [100, 1000, 10_000] {
        let d = choose_iv_fixture(n, 1);
        let z = d.z();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| fit_tsls(black_box(d.y()), black_box(d.x()), black_box(&z)).unwrap())
        });
    }
    g.finish();
}

fn selection(c: &mut Criterion) {
    let d = choose_iv_fixture(500, 2);
    let cands = candidate_lattice(3, 1, &CandidateMode::AllSubsets).unwrap();
    let target = Target::Coefficient(0);
    c.bench_function("fmsc_choose_iv/500", |b| b.iter(|| fmsc_choose_iv(black_box(&d), &cands, &target).unwrap()));
    let o = ols_tsls_fixture(500, 3);
    c.bench_function("fmsc_ols_vs_tsls/500", |b| b.iter(|| fmsc_ols_vs_tsls(black_box(&o)).unwrap()));
    c.bench_function("j_statistic/500", |b| b.iter(|| j_statistic(black_box(&d), &MomentSet::full(3, 1)).unwrap()));
    c.bench_function("gmm_bic/500", |b| b.iter(|| gmm_msc_select(black_box(&d), &cands, Penalty::Bic).unwrap()));
}

fn intervals(c: &mut Criterion) {
    let mut g = c.benchmark_group("two_step_ci");
    g.sample_size(10);
    let d = choose_iv_fixture(200, 4);
    let cands = candidate_lattice(3, 1, &CandidateMode::AllSubsets).unwrap();
    let ctx = PostSelectionContext::choose_iv(&d, &cands, &Target::Coefficient(0), WeightRule::Fmsc).unwrap();
    for draws in [200, 1000] {
        let settings = CiSettings { draws, seed: 5, ..CiSettings::default() };
        g.bench_with_input(BenchmarkId::new("choose_iv", draws), &settings, |b, s| {
            b.iter(|| two_step_ci(black_box(&ctx), s).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, estimators, selection, intervals);
criterion_main!(benches);
