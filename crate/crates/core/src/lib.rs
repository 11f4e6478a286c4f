//! Expert-augmented rule ensembles.
//!
//! The crate covers the numerical side of the pipeline:
//!
//! * [`dataset`]: tabular binary-outcome data, CSV ingest, imputation, stratified sampling.
//! * [`gbm`]: logistic gradient boosting of shallow regression trees (the rule generator).
//! * [`rules`]: leaf-path rule extraction, the Boolean rule matrix and rule cards.
//! * [`sparse_linear`]: weighted L1/L2 penalized logistic regression over rule columns.
//! * [`elicitation`]: expert rating aggregation, rank deltas, outliers, calibration.
//! * [`eaml`]: hard, soft and general expert-weighted refits plus hyperparameter selection.
//! * [`evaluation`]: AUC, balanced accuracy, Wilcoxon rank-sum, learning curves, shift reports.
//! * [`synthetic`]: confounded data generator and simulated experts.
//! * [`pipeline`]: stage drivers shared by the CLI and the experiment harness.
//!
//! Data-parallel loops go through [`par`]; with the `parallel` feature (default) they run on
//! rayon, otherwise sequentially. Results are identical either way.

pub mod dataset;
pub mod eaml;
pub mod elicitation;
pub mod error;
pub mod evaluation;
pub mod gbm;
pub mod par;
pub mod pipeline;
pub mod rules;
pub mod sparse_linear;
pub mod stats;
pub mod synthetic;

pub use error::{EamlError, Result};
