//! Iterative classification under partial feedback.
//!
//! Outcomes are revealed only for positively classified samples. The engine
//! alternates between exploiting a region of the domain where enough outcomes
//! have been observed and exploring the rest under a false-discovery-rate
//! budget, so the fraction of false positives stays bounded while every
//! subpopulation keeps a positive chance of being observed.
//!
//! Module map:
//! - [`types`]: samples, batches, classifiers, utility tuples, configuration.
//! - [`metrics`]: utility, revenue, FDR and group disparity measurements.
//! - [`learner`]: reweighted pools and constrained training.
//! - [`regions`]: exploit/explore partition by accumulated exploration mass.
//! - [`exploration`]: exploration strategies, budget, weighted sampler, sigma.
//! - [`engine`]: the learn / exploit / explore / observe loop and experiments.
//! - [`baselines`]: the offline-optimal and fair exploit-only comparisons.
//! - [`data`]: CSV ingestion, streams, biased initial pools, exact domains.
//! - [`oracle`]: brute-force verification on exact finite domains.
//! - [`protocol`]: dataset stream, biased initial pool and `f_0` per repetition.

pub mod baselines;
pub mod data;
pub mod engine;
pub mod error;
pub mod exploration;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod protocol;
pub mod regions;
pub mod report;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AlgorithmConfig, AlphaExploitSchedule, GroupId, IterationBatch, LinearClassifier, Sample,
    StrategyKind, UtilityCoefficients,
};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
