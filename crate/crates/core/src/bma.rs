//! Model-averaged prediction over an ensemble and the accuracy / entropy
//! scores the experiments report.
//!
//! Averaging uses uniform 1/N weights over the sampled trees. Entropy is
//! the Shannon entropy (base 2) of the averaged predictive distribution,
//! summed over test samples.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sampler::Ensemble;

/// Cross-validated accuracy / entropy with 2-sigma spread across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy_percent: f64,
    pub entropy_bits: f64,
    /// One (P, E) pair per evaluation unit (fold, or fold x repeat).
    pub per_fold: Vec<(f64, f64)>,
    pub accuracy_2sigma: f64,
    pub entropy_2sigma: f64,
}

impl EvaluationReport {
    /// Aggregates per-fold (P, E) pairs: means plus twice the sample
    /// standard deviation. A single fold reports zero spread.
    pub fn from_folds(per_fold: Vec<(f64, f64)>) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(Error::Evaluation("no fold results to aggregate".into()));
        }
        let (p, e): (Vec<f64>, Vec<f64>) = per_fold.iter().copied().unzip();
        let (p_mean, p_2s) = mean_and_two_sigma(&p);
        let (e_mean, e_2s) = mean_and_two_sigma(&e);
        Ok(EvaluationReport {
            accuracy_percent: p_mean,
            entropy_bits: e_mean,
            per_fold,
            accuracy_2sigma: p_2s,
            entropy_2sigma: e_2s,
        })
    }
}

/// (mean, 2 * sample standard deviation); spread is 0 for fewer than two
/// values.
pub fn mean_and_two_sigma(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 2.0 * var.sqrt())
}

fn check_dimensions(ensemble: &Ensemble, x: &[f64]) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::Evaluation("empty ensemble".into()));
    }
    let m = ensemble.provenance.attribute_names.len();
    if x.len() != m {
        return Err(Error::Evaluation(format!(
            "input has {} attributes, ensemble expects {m}",
            x.len()
        )));
    }
    Ok(())
}

/// Uniformly averaged predictive distribution:
/// `(1/N) * sum_i predict_distribution(tree_i, x, alpha)`.
pub fn bma_predict(ensemble: &Ensemble, x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dimensions(ensemble, x)?;
    let c = ensemble.provenance.class_count;
    let mut sum = vec![0.0; c];
    for tree in &ensemble.trees {
        let dist = tree.predict_distribution(x, alpha)?;
        for (acc, p) in sum.iter_mut().zip(dist.as_slice()) {
            *acc += p;
        }
    }
    let n = ensemble.len() as f64;
    sum.iter_mut().for_each(|p| *p /= n);
    Ok(sum)
}

/// Argmax of the averaged predictive distribution, ties broken toward the
/// lowest class index. Returns a class in `1..=C`.
pub fn classify(ensemble: &Ensemble, x: &[f64], alpha: f64) -> Result<usize> {
    let probs = bma_predict(ensemble, x, alpha)?;
    Ok(argmax_class(&probs))
}

pub(crate) fn argmax_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    best + 1
}

fn entropy_bits(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Accuracy percent and summed predictive entropy of the model-averaged
/// classifier over `test`.
pub fn evaluate(ensemble: &Ensemble, test: &Dataset, alpha: f64) -> Result<(f64, f64)> {
    if test.n_samples() == 0 {
        return Err(Error::Evaluation("empty test set".into()));
    }
    if test.n_attributes() != ensemble.provenance.attribute_names.len()
        || test.class_count() != ensemble.provenance.class_count
    {
        return Err(Error::Evaluation(format!(
            "test set is {} attributes x {} classes, ensemble expects {} x {}",
            test.n_attributes(),
            test.class_count(),
            ensemble.provenance.attribute_names.len(),
            ensemble.provenance.class_count
        )));
    }
    let mut correct = 0usize;
    let mut entropy = 0.0;
    for i in 0..test.n_samples() {
        let probs = bma_predict(ensemble, test.row(i), alpha)?;
        if argmax_class(&probs) == test.label(i) {
            correct += 1;
        }
        entropy += entropy_bits(&probs);
    }
    let accuracy = 100.0 * correct as f64 / test.n_samples() as f64;
    Ok((accuracy, entropy))
}

/// Accuracy percent of each tree classifying alone, in ensemble order.
pub fn per_tree_performance(ensemble: &Ensemble, test: &Dataset, alpha: f64) -> Result<Vec<f64>> {
    if ensemble.is_empty() {
        return Err(Error::Evaluation("empty ensemble".into()));
    }
    if test.n_samples() == 0 {
        return Err(Error::Evaluation("empty test set".into()));
    }
    if test.n_attributes() != ensemble.provenance.attribute_names.len() {
        return Err(Error::Evaluation(
            "test set width does not match the ensemble".into(),
        ));
    }
    let mut out = Vec::with_capacity(ensemble.len());
    for tree in &ensemble.trees {
        let mut correct = 0usize;
        for i in 0..test.n_samples() {
            let dist = tree.predict_distribution(test.row(i), alpha)?;
            if argmax_class(dist.as_slice()) == test.label(i) {
                correct += 1;
            }
        }
        out.push(100.0 * correct as f64 / test.n_samples() as f64);
    }
    Ok(out)
}
