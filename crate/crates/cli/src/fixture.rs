//! Synthetic input files drawn from the simulation designs.

use std::path::{Path, PathBuf};

use fmsc_core::simulation::{Design, DesignFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::analyze::{write_bytes, Table};
use crate::config::{AnalysisConfig, BlockSpec, CiSpec, ModeSpec, OutputSpec};
use crate::error::CliResult;

/// One draw from a design as a table: `y, x, z1, z2, z3`, plus `w` for the
/// instrument-selection design.
pub fn fixture_table(family: DesignFamily, strength: f64, rho: f64, n: usize, seed: u64) -> CliResult<Table> {
    let design = Design::new(family, strength, rho, n)?;
    let d = design.generate(&mut ChaCha20Rng::seed_from_u64(seed))?;
    let mut headers = vec!["y".to_string(), "x".to_string()];
    let mut columns = vec![d.y().iter().cloned().collect(), d.x().column(0).iter().cloned().collect()];
    for j in 0..3 {
        headers.push(format!("z{}", j + 1));
        columns.push(d.z1().column(j).iter().cloned().collect());
    }
    if family == DesignFamily::ChooseIv {
        headers.push("w".into());
        columns.push(d.z2().column(0).iter().cloned().collect());
    }
    Ok(Table { headers, columns })
}

pub fn table_to_csv(table: &Table) -> Vec<u8> {
    let mut out = table.headers.join(",");
    out.push('\n');
    for i in 0..table.rows() {
        let row: Vec<String> = table.columns.iter().map(|c| format!("{}", c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_table(table: &Table, out: Option<&Path>) -> CliResult<()> {
    write_bytes(out, &table_to_csv(table))
}

/// Analysis config matching an instrument-selection fixture.
pub fn fixture_config(input: PathBuf) -> AnalysisConfig {
    AnalysisConfig {
        input,
        outcome: "y".into(),
        regressors: vec!["x".into()],
        baseline_instruments: vec!["z1".into(), "z2".into(), "z3".into()],
        intercept: false,
        target: "x".into(),
        candidate_mode: ModeSpec::Blocks,
        ci: CiSpec::default(),
        output: OutputSpec::default(),
        suspect_blocks: vec![BlockSpec { name: "w".into(), columns: vec!["w".into()] }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::parse_table;

    #[test]
    fn csv_round_trip_is_exact() {
        let t = fixture_table(DesignFamily::ChooseIv, 0.4, 0.0, 30, 3).unwrap();
        let back = parse_table(table_to_csv(&t).as_slice(), "fixture").unwrap();
        assert_eq!(back, t);
        let o = fixture_table(DesignFamily::OlsTsls, 0.4, 0.1, 30, 3).unwrap();
        assert_eq!(o.headers, ["y", "x", "z1", "z2", "z3"]);
    }
}
