//! Posterior attribute-usage profiling, weak-attribute detection, and the
//! two competing techniques: refining an ensemble by discarding trees that
//! split on weak attributes, and discarding the attributes themselves then
//! resampling on the reduced data.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_rule_catalog, Dataset};
use crate::error::{Error, Result};
use crate::sampler::{run_chain, ChainConfig, Diagnostics, Ensemble, RefinementRecord};

/// Per-attribute posterior usage probabilities: splits on attribute j over
/// all splits in the ensemble. Sums to one when any split exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    usage: Vec<f64>,
    total_splits: u64,
}

impl ImportanceProfile {
    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    pub fn total_splits(&self) -> u64 {
        self.total_splits
    }

    pub fn n_attributes(&self) -> usize {
        self.usage.len()
    }
}

/// Split-level usage frequency over the whole ensemble. Single-terminal
/// trees contribute nothing; an ensemble of only single-terminal trees is
/// a degenerate profile.
pub fn usage_profile(ensemble: &Ensemble) -> Result<ImportanceProfile> {
    if ensemble.is_empty() {
        return Err(Error::Evaluation("empty ensemble".into()));
    }
    let m = ensemble.provenance.attribute_names.len();
    let mut counts = vec![0u64; m];
    for tree in &ensemble.trees {
        for index in tree.split_indices() {
            if let crate::tree::Node::Split { attribute, .. } = tree.node(index) {
                counts[*attribute] += 1;
            }
        }
    }
    let total_splits: u64 = counts.iter().sum();
    if total_splits == 0 {
        return Err(Error::DegenerateProfile(
            "every tree in the ensemble is a single terminal".into(),
        ));
    }
    let usage = counts
        .iter()
        .map(|&c| c as f64 / total_splits as f64)
        .collect();
    Ok(ImportanceProfile {
        usage,
        total_splits,
    })
}

/// Attributes whose usage probability falls strictly below the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSet {
    pub threshold: f64,
    pub attributes: BTreeSet<usize>,
}

impl WeakSet {
    pub fn n_weak(&self) -> usize {
        self.attributes.len()
    }
}

/// `{ j : usage[j] < T }`; strict inequality, so `T = 0` yields the empty
/// set.
pub fn weak_attributes(profile: &ImportanceProfile, threshold: f64) -> WeakSet {
    let attributes = profile
        .usage
        .iter()
        .enumerate()
        .filter(|(_, &u)| u < threshold)
        .map(|(j, _)| j)
        .collect();
    WeakSet {
        threshold,
        attributes,
    }
}

/// Keeps exactly the trees whose used attributes avoid the weak set, in
/// order, with their log likelihoods. Errors when nothing survives,
/// reporting the largest threshold that would keep at least one tree.
pub fn refine_ensemble(ensemble: &Ensemble, weak: &WeakSet) -> Result<Ensemble> {
    if ensemble.is_empty() {
        return Err(Error::Evaluation("empty ensemble".into()));
    }
    let mut trees = Vec::new();
    let mut log_liks = Vec::new();
    for (tree, &ll) in ensemble.trees.iter().zip(&ensemble.log_liks) {
        if tree
            .attributes_used()
            .intersection(&weak.attributes)
            .next()
            .is_none()
        {
            trees.push(tree.clone());
            log_liks.push(ll);
        }
    }
    if trees.is_empty() {
        return Err(Error::RefinementExhausted {
            threshold: weak.threshold,
            viable: largest_viable_threshold(ensemble)?,
        });
    }
    let mut provenance = ensemble.provenance.clone();
    provenance.refinement = Some(RefinementRecord {
        threshold: weak.threshold,
        n_weak: weak.n_weak(),
        weak_attributes: weak
            .attributes
            .iter()
            .map(|&j| ensemble.provenance.attribute_names[j].clone())
            .collect(),
        retained: trees.len(),
        total: ensemble.len(),
    });
    Ok(Ensemble {
        trees,
        log_liks,
        config: ensemble.config.clone(),
        provenance,
    })
}

/// The largest T' such that `refine_ensemble` with `weak_attributes(_, T')`
/// keeps at least one tree: the best tree's minimum usage over the
/// attributes it splits on.
fn largest_viable_threshold(ensemble: &Ensemble) -> Result<f64> {
    let profile = usage_profile(ensemble)?;
    let mut best = f64::NEG_INFINITY;
    for tree in &ensemble.trees {
        let used = tree.attributes_used();
        let min_usage = used
            .iter()
            .map(|&j| profile.usage[j])
            .fold(f64::INFINITY, f64::min);
        best = best.max(min_usage);
    }
    Ok(best)
}

/// The comparison technique: project the weak attributes out of the data,
/// rebuild the rule catalog, and rerun the chain with the same config and
/// seed. The surviving original attribute names are recorded in the
/// provenance so predictions can be mapped back.
pub fn reduce_and_rerun(
    data: &Dataset,
    weak: &WeakSet,
    config: &ChainConfig,
) -> Result<(Ensemble, Diagnostics)> {
    let m = data.n_attributes();
    if weak.attributes.len() >= m {
        return Err(Error::Parameter(
            "cannot discard every attribute before rerunning".into(),
        ));
    }
    if weak.attributes.iter().any(|&j| j >= m) {
        return Err(Error::Parameter(
            "weak set references attributes outside the dataset".into(),
        ));
    }
    let kept: Vec<usize> = (0..m).filter(|j| !weak.attributes.contains(j)).collect();
    let projected = data.project_columns(&kept)?;
    let catalog = build_rule_catalog(&projected);
    let (mut ensemble, diagnostics) = run_chain(&projected, &catalog, config)?;
    ensemble.provenance.kept_attributes = Some(
        kept.iter()
            .map(|&j| data.attribute_names()[j].clone())
            .collect(),
    );
    Ok((ensemble, diagnostics))
}
