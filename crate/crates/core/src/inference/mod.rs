//! Confidence intervals that account for moment selection.

pub mod chisq;
pub mod ci;
pub mod mvn;
pub mod region;

pub use chisq::{chi_sq_cdf, chi_sq_quantile, normal_two_sided_critical};
pub use ci::{
    lambda_draws, naive_ci, one_and_two_step_ci, one_step_ci, two_step_ci, CiMethod, CiResult, CiSettings, DrawCache,
    PostSelectionContext, RegionDiagnostic, WeightRule,
};
pub use mvn::{mvn_draws, mvn_draws_rng};
pub use region::{delta_n, tau_region};
