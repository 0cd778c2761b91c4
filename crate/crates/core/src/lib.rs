//! Bayesian model averaging over classification trees.
//!
//! A reversible-jump MCMC sampler draws binary decision trees from their
//! posterior under a Dirichlet-multinomial marginal likelihood; a BMA layer
//! averages their predictions; posterior attribute-usage probabilities
//! identify weak attributes; and two competing techniques exploit them:
//! refining the ensemble by discarding trees that split on weak attributes,
//! or discarding the attributes and resampling on the reduced data.
//!
//! Modules mirror the pipeline:
//! - [`dataset`]: CSV and synthetic data, rule catalogs, stratified folds
//! - [`tree`]: decision trees, routing, structural edits
//! - [`likelihood`]: Dirichlet-multinomial marginal likelihood
//! - [`sampler`]: the RJ-MCMC chain, diagnostics, ensemble files
//! - [`bma`]: model-averaged prediction, accuracy and entropy scoring
//! - [`refine`]: usage profiles, weak sets, both refinement techniques
//! - [`harness`]: cross-validation, threshold sweeps, report emission
//!
//! All randomness flows through seeded ChaCha8 generators, so every run is
//! reproducible bit for bit from its seeds.

pub mod bma;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod refine;
pub mod sampler;
pub mod tree;

pub use bma::{bma_predict, classify, evaluate, per_tree_performance, EvaluationReport};
pub use dataset::{
    build_rule_catalog, generate_synthetic, load_csv, make_folds, write_csv, Dataset, FoldPlan,
    RuleCatalog,
};
pub use error::{Error, Result};
pub use harness::{
    cross_validate, emit_reports, threshold_sweep, DataSource, ExperimentSpec, SweepOutput,
    SyntheticSpec, Technique,
};
pub use likelihood::{log_marginal_likelihood, LikelihoodParams, LogLikTables};
pub use refine::{
    reduce_and_rerun, refine_ensemble, usage_profile, weak_attributes, ImportanceProfile, WeakSet,
};
pub use sampler::{
    accept, run_chain, stationarity_summary, Chain, ChainConfig, Diagnostics, Ensemble, MoveKind,
    Provenance,
};
pub use tree::{DecisionTree, Node, NodeDistribution};
