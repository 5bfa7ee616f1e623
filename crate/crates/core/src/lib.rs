//! Audit the utility/fairness trade-off between a real tabular dataset and a
//! synthetic counterpart.
//!
//! The crate is organised around the stages of an audit run:
//!
//! - [`dataset`]: CSV loading, preprocessing presets, splitting, subgroup restriction.
//! - [`model`]: a weighted random forest and threshold tuning for balanced accuracy.
//! - [`fairness`]: per-group confusion rates and the three group-fairness metrics.
//! - [`mitigation`]: EO thresholding, reweighing, grid reduction and HPS post-processing.
//! - [`stats`]: paired t-tests, run summaries and percent change.
//! - [`synthgen`]: a copula surrogate generator, planted-bias fixtures and nnAA.
//! - [`experiment`]: the config-driven multi-seed runner and report emitters.

pub mod dataset;
pub mod experiment;
pub mod fairness;
pub mod mitigation;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synthgen;

pub use dataset::{ProtectedSpec, Table};
pub use experiment::{AuditReport, ExperimentConfig};
pub use fairness::{FairnessScores, GroupRates};
pub use model::{ForestConfig, TrainedForest};
