//! Fixtures shared by the benchmarks.

use fmsc_core::simulation::dgp::{gen_choose_iv, gen_ols_tsls, ChooseIvDesign, OlsTslsDesign};
use fmsc_core::Dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn choose_iv_fixture(n: usize, seed: u64) -> Dataset {
    let design = ChooseIvDesign::new(0.4, 0.1, n).expect("valid design");
    gen_choose_iv(&design, &mut ChaCha8Rng::seed_from_u64(seed)).expect("data")
}

pub fn ols_tsls_fixture(n: usize, seed: u64) -> Dataset {
    let design = OlsTslsDesign::new(0.4, 0.2, n).expect("valid design");
    gen_ols_tsls(&design, &mut ChaCha8Rng::seed_from_u64(seed)).expect("data")
}
