//! Library behind the `fmsc` command: analysis configs, CSV input, the
//! simulation runner and fixture generation.

pub mod analyze;
pub mod app;
pub mod config;
pub mod error;
pub mod fixture;
pub mod simulate;

pub use analyze::{analyze, write_report, AnalysisReport};
pub use config::{AnalysisConfig, Format};
pub use error::{CliError, CliResult};
pub use simulate::{simulate, SimulateOptions};
