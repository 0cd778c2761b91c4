//! Shared fixtures for the benchmark targets.

use treebma::dataset::{build_rule_catalog, generate_synthetic, Dataset, RuleCatalog};
use treebma::sampler::{run_chain, ChainConfig, Ensemble};

/// The synthetic corpus shape the experiments run on.
pub fn corpus() -> (Dataset, RuleCatalog) {
    let data = generate_synthetic(686, 72, 6, 12, 0.35, 1).expect("valid synthetic spec");
    let catalog = build_rule_catalog(&data);
    (data, catalog)
}

/// A short-chain ensemble for scoring benchmarks.
pub fn small_ensemble(data: &Dataset, catalog: &RuleCatalog) -> Ensemble {
    let config = ChainConfig {
        burn_in: 2_000,
        post_burn_in: 200,
        thinning: 1,
        seed: 7,
        ..ChainConfig::default()
    };
    run_chain(data, catalog, &config).expect("chain runs").0
}
