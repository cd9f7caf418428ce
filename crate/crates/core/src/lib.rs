//! Focused moment selection for linear instrumental-variables models.
//!
//! The crate estimates the asymptotic mean-squared error of competing
//! moment sets (the FMSC), implements the usual competing selection
//! criteria, forms moment-average estimators, builds simulation-based
//! confidence intervals that remain valid after selection, and ships the
//! Monte Carlo designs used to study all of the above.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod averaging;
pub mod criteria;
pub mod data;
pub mod error;
pub mod estimators;
pub mod fmsc;
pub mod inference;
pub mod linalg;
pub mod simulation;

pub use data::{
    candidate_lattice, selection_matrix, CandidateKind, CandidateMode, Dataset, EstimateResult,
    GmmComponents, MomentSet, SelectionMatrix, SuspectBlock,
};
pub use error::{Error, Result};
pub use estimators::SigmaEstimates;
pub use fmsc::{FmscReport, Target};
pub use inference::{CiMethod, CiResult};
