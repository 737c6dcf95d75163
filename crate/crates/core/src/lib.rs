//! Gaussian-gated Gaussian mixture of experts.
//!
//! Maximum-likelihood fitting by EM, the merge dendrogram of a fitted mixing
//! measure, the dendrogram selection criterion for the number of experts, and
//! Voronoi-loss / Wasserstein metrics for parameter estimation error.

pub mod cli;
pub mod dendrogram;
pub mod em;
pub mod error;
pub mod harness;
pub mod io;
mod linalg;
pub mod metrics;
pub mod model;
pub mod selection;

pub use dendrogram::{build_dendrogram, Dendrogram};
pub use em::{fit_em, EmConfig, FitResult, Init};
pub use error::{Error, Result};
pub use linalg::log_sum_exp;
pub use model::{Dataset, ExpertAtom, MixingMeasure};
pub use selection::{dsc_select, information_criteria, CriterionScores};
