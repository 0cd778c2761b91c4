//! Marginal likelihood of a tree's terminal counts under a symmetric
//! Dirichlet prior on each terminal's class probabilities.
//!
//! Everything stays in the log domain; no factorials are materialized.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tree::{DecisionTree, Node};

/// Dirichlet concentration for the terminal-node class distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodParams {
    pub alpha: f64,
}

impl Default for LikelihoodParams {
    fn default() -> Self {
        LikelihoodParams { alpha: 1.0 }
    }
}

/// Log marginal likelihood of the data routed into `tree`:
/// sum over terminals t of
/// `lnG(C*a) - lnG(n_t + C*a) + sum_j (lnG(n_tj + a) - lnG(a))`.
///
/// Requires fresh counts; the value is a sum of independent per-terminal
/// contributions.
pub fn log_marginal_likelihood(tree: &DecisionTree, params: &LikelihoodParams) -> Result<f64> {
    if !tree.counts_fresh() {
        return Err(Error::StaleCounts);
    }
    let alpha = params.alpha;
    let c = tree.class_count() as f64;
    let mut total = 0.0;
    for index in tree.terminal_indices() {
        let counts = tree.counts(index);
        let n_t: f64 = counts.iter().map(|&x| x as f64).sum();
        total += ln_gamma(c * alpha) - ln_gamma(n_t + c * alpha);
        for &n_tj in counts {
            total += ln_gamma(n_tj as f64 + alpha) - ln_gamma(alpha);
        }
    }
    Ok(total)
}

/// Precomputed log-gamma tables for integer counts, so the sampler's inner
/// loop does plain lookups and additions.
#[derive(Debug, Clone)]
pub struct LogLikTables {
    /// `per_class[x] = lnG(x + alpha) - lnG(alpha)`
    per_class: Vec<f64>,
    /// `per_total[x] = lnG(C*alpha) - lnG(x + C*alpha)`
    per_total: Vec<f64>,
}

impl LogLikTables {
    /// Tables covering terminal counts up to `max_count` samples.
    pub fn new(class_count: usize, max_count: usize, alpha: f64) -> Self {
        let c_alpha = class_count as f64 * alpha;
        let lg_alpha = ln_gamma(alpha);
        let lg_c_alpha = ln_gamma(c_alpha);
        let per_class = (0..=max_count)
            .map(|x| ln_gamma(x as f64 + alpha) - lg_alpha)
            .collect();
        let per_total = (0..=max_count)
            .map(|x| lg_c_alpha - ln_gamma(x as f64 + c_alpha))
            .collect();
        LogLikTables {
            per_class,
            per_total,
        }
    }

    pub fn log_marginal(&self, tree: &DecisionTree) -> Result<f64> {
        if !tree.counts_fresh() {
            return Err(Error::StaleCounts);
        }
        let mut total = 0.0;
        for node in (0..tree.node_count()).map(|i| tree.node(i)) {
            if let Node::Terminal { counts } = node {
                let mut n_t = 0usize;
                for &n_tj in counts {
                    n_t += n_tj as usize;
                    total += self.per_class[n_tj as usize];
                }
                total += self.per_total[n_t];
            }
        }
        Ok(total)
    }
}
