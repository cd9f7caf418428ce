//! Analysis configuration, read from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    /// Every subset of the individual suspect columns.
    AllSubsets,
    /// Every union of whole suspect blocks.
    #[default]
    Blocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CiSpec {
    pub alpha: f64,
    pub delta: f64,
    pub draws: usize,
    pub seed: u64,
    pub search_budget: usize,
}

impl Default for CiSpec {
    fn default() -> Self {
        Self { alpha: 0.05, delta: 0.05, draws: 10_000, seed: 1, search_budget: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// CSV file; relative paths are resolved against the config file.
    pub input: PathBuf,
    pub outcome: String,
    pub regressors: Vec<String>,
    pub baseline_instruments: Vec<String>,
    /// Adds a constant to both the regressors and the baseline instruments.
    #[serde(default)]
    pub intercept: bool,
    /// Regressor whose coefficient is the target.
    pub target: String,
    #[serde(default)]
    pub candidate_mode: ModeSpec,
    #[serde(default)]
    pub ci: CiSpec,
    #[serde(default)]
    pub output: OutputSpec,
    pub suspect_blocks: Vec<BlockSpec>,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Config { path: origin.into(), message: e.to_string() })?;
        cfg.validate().map_err(|message| CliError::Config { path: origin.into(), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        if cfg.input.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.input = dir.join(&cfg.input);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.regressors.is_empty() {
            return Err("at least one regressor is required".into());
        }
        if self.suspect_blocks.is_empty() {
            return Err("at least one suspect block is required".into());
        }
        let mut seen = HashSet::new();
        let suspect = self.suspect_blocks.iter().flat_map(|b| b.columns.iter());
        let all = std::iter::once(&self.outcome)
            .chain(&self.regressors)
            .chain(&self.baseline_instruments)
            .chain(suspect);
        for col in all {
            if col.is_empty() {
                return Err("empty column name".into());
            }
            if !seen.insert(col.as_str()) {
                return Err(format!("column '{col}' is assigned more than one role"));
            }
        }
        let mut names = HashSet::new();
        for b in &self.suspect_blocks {
            if b.columns.is_empty() {
                return Err(format!("suspect block '{}' has no columns", b.name));
            }
            if b.name.is_empty() || !names.insert(b.name.as_str()) {
                return Err(format!("suspect block names must be non-empty and unique ('{}')", b.name));
            }
        }
        if !self.regressors.contains(&self.target) {
            return Err(format!("target '{}' is not a regressor", self.target));
        }
        let ci = &self.ci;
        if !(ci.alpha > 0.0 && ci.delta > 0.0 && ci.alpha + ci.delta < 1.0) {
            return Err(format!("need 0 < alpha, delta and alpha + delta < 1, got {} and {}", ci.alpha, ci.delta));
        }
        if ci.draws < 2 {
            return Err("ci.draws must be at least 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str = r#"
input = "data.csv"
outcome = "y"
regressors = ["x"]
baseline_instruments = ["z1", "z2", "z3"]
target = "x"

[ci]
alpha = 0.05
delta = 0.05

[[suspect_blocks]]
name = "w"
columns = ["w"]
"#;

    fn base() -> AnalysisConfig {
        AnalysisConfig::from_toml(EXAMPLE, "example").unwrap()
    }

    #[test]
    fn parses_with_defaults() {
        let cfg = base();
        assert_eq!(cfg.ci.draws, 10_000);
        assert_eq!(cfg.candidate_mode, ModeSpec::Blocks);
        assert_eq!(cfg.output.format, Format::Json);
        assert!(!cfg.intercept);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = base();
        c.target = "z1".into();
        assert!(c.validate().is_err());
        let mut c = base();
        c.suspect_blocks[0].columns.push("z2".into());
        assert!(c.validate().unwrap_err().contains("more than one role"));
        let mut c = base();
        c.ci.alpha = 0.5;
        c.ci.delta = 0.5;
        assert!(c.validate().is_err());
        assert!(AnalysisConfig::from_toml("input = 3", "x").is_err());
        assert!(AnalysisConfig::from_toml(&format!("{EXAMPLE}\nbogus = 1"), "x").is_err());
    }

    fn ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_]{0,6}"
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            names in proptest::collection::hash_set(ident(), 5..9),
            alpha in 0.001f64..0.4,
            delta in 0.001f64..0.4,
            draws in 2usize..100_000,
            seed in any::<u64>(),
            intercept in any::<bool>(),
            all_subsets in any::<bool>(),
            csv in any::<bool>(),
            path in proptest::option::of("[a-z]{1,8}\\.json"),
        ) {
            let names: Vec<String> = names.into_iter().collect();
            let cfg = AnalysisConfig {
                input: PathBuf::from("in.csv"),
                outcome: names[0].clone(),
                regressors: vec![names[1].clone()],
                baseline_instruments: vec![names[2].clone()],
                intercept,
                target: names[1].clone(),
                candidate_mode: if all_subsets { ModeSpec::AllSubsets } else { ModeSpec::Blocks },
                ci: CiSpec { alpha, delta, draws, seed, search_budget: 500 },
                output: OutputSpec { path: path.map(PathBuf::from), format: if csv { Format::Csv } else { Format::Json } },
                suspect_blocks: vec![
                    BlockSpec { name: "a".into(), columns: vec![names[3].clone()] },
                    BlockSpec { name: "b".into(), columns: names[4..].to_vec() },
                ],
            };
            let text = cfg.to_toml();
            let back = AnalysisConfig::from_toml(&text, "round-trip").unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_toml(), text);
        }
    }
}
