//! Command-line definition and dispatch for the `fmsc` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use fmsc_core::simulation::{DesignFamily, Experiment};

use crate::config::{AnalysisConfig, Format};
use crate::error::{CliError, CliResult};
use crate::{analyze, fixture, simulate};

#[derive(Parser)]
#[command(name = "fmsc", version, about = "Focused moment selection for linear IV models")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// FMSC tables and post-selection intervals for a CSV dataset.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the input path in the config.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long = "draws-J")]
        draws: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Runs a Monte Carlo experiment and writes a long-format table.
    Simulate {
        /// One of rmse-ols-tsls, rmse-choose-iv, coverage-ols-tsls,
        /// coverage-choose-iv, criteria-compare.
        experiment: String,
        /// Grid overrides such as `N=50,gamma=0.6,rho=0.5`.
        #[arg(long)]
        cells: Vec<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long = "draws-J")]
        draws: Option<usize>,
        /// Comma-separated method labels.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Writes a synthetic dataset drawn from a simulation design.
    Fixture {
        #[arg(long, value_enum)]
        design: FixtureDesign,
        /// `π` or `γ`.
        #[arg(long)]
        strength: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also writes a matching analysis config (instrument selection only).
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Lists experiments and their default methods.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureDesign {
    OlsTsls,
    ChooseIv,
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Argument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Analyze { config, input, seed, alpha, delta, draws, out, format } => {
            let mut cfg = AnalysisConfig::load(&config)?;
            if let Some(i) = input {
                cfg.input = i;
            }
            if let Some(s) = seed {
                cfg.ci.seed = s;
            }
            if let Some(a) = alpha {
                cfg.ci.alpha = a;
            }
            if let Some(d) = delta {
                cfg.ci.delta = d;
            }
            if let Some(j) = draws {
                cfg.ci.draws = j;
            }
            cfg.validate().map_err(|message| CliError::Config { path: config.display().to_string(), message })?;
            let report = analyze::analyze(&cfg)?;
            let format = format.unwrap_or(cfg.output.format);
            let out = out.or(cfg.output.path.clone());
            analyze::write_report(&report, format, out.as_deref())
        }
        Command::Simulate { experiment, cells, reps, seed, alpha, delta, draws, methods, out, format } => {
            let opts = simulate::SimulateOptions { cells, reps, seed, alpha, delta, draws, methods };
            let rows = simulate::simulate(&experiment, &opts)?;
            simulate::write_rows(&rows, format, out.as_deref())
        }
        Command::Fixture { design, strength, rho, n, seed, out, config_out } => {
            let family = match design {
                FixtureDesign::OlsTsls => DesignFamily::OlsTsls,
                FixtureDesign::ChooseIv => DesignFamily::ChooseIv,
            };
            let table = fixture::fixture_table(family, strength, rho, n, seed)?;
            fixture::write_table(&table, out.as_deref())?;
            if let Some(path) = config_out {
                if family != DesignFamily::ChooseIv {
                    return Err(CliError::Argument("configs are only generated for choose-iv fixtures".into()));
                }
                let data = out.ok_or_else(|| CliError::Argument("--config-out needs --out".into()))?;
                let input = match (data.parent(), path.parent()) {
                    (Some(a), Some(b)) if a == b => PathBuf::from(data.file_name().expect("file name")),
                    _ => std::path::absolute(&data).unwrap_or(data),
                };
                let text = fixture::fixture_config(input).to_toml();
                std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })?;
            }
            Ok(())
        }
        Command::List => {
            for e in Experiment::ALL {
                let methods: Vec<String> = e.default_methods().iter().map(|m| m.label()).collect();
                println!("{}\t{}", e.name(), methods.join(","));
            }
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Argument(e.to_string()))?;
    run(cli)
}
