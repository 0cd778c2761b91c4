//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).
//!
//! A1  likelihood correctness against hand-worked values and an
//!     independent sequential-predictive oracle
//! A2  exact posterior agreement on an enumerable instance
//! A3  chance-level accuracy on label-shuffled data
//! A4  refinement benefit and kept-vs-discarded histogram shape
//! A5  chain stationarity and acceptance-rate sanity band
//! A6  refinement invariants on sweep runs
//! A7  byte-identical reports from identical sweeps
//! A8  flat-table format fidelity

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treebma::dataset::{build_rule_catalog, generate_synthetic, load_csv, write_csv, Dataset};
use treebma::harness::{
    cross_validate, emit_reports, threshold_sweep, DataSource, ExperimentSpec, SweepOutput,
    SyntheticSpec, Technique,
};
use treebma::likelihood::{log_marginal_likelihood, LikelihoodParams};
use treebma::refine::weak_attributes;
use treebma::sampler::{run_chain, stationarity_summary, Chain, ChainConfig};
use treebma::tree::DecisionTree;

/// Synthetic-corpus effect size, tuned so the cross-validated baseline
/// accuracy of the reduced-length chains lands inside [25, 35] percent.
const CORPUS_EFFECT: f64 = 0.35;

fn criterion(name: &str, pass: bool, detail: &str) {
    println!("{name}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name} failed: {detail}");
}

// ---------------------------------------------------------------------
// A1
// ---------------------------------------------------------------------

/// Independent oracle: log probability of the data as a product of
/// sequential smoothed predictive probabilities within each terminal.
fn sequential_predictive_log_lik(tree: &DecisionTree, data: &Dataset, alpha: f64) -> f64 {
    let c = data.class_count() as f64;
    let mut running: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut total = 0.0;
    for i in 0..data.n_samples() {
        let t = tree.route(data.row(i));
        let counts = running
            .entry(t)
            .or_insert_with(|| vec![0.0; data.class_count()]);
        let seen: f64 = counts.iter().sum();
        let label = data.label(i) - 1;
        total += ((counts[label] + alpha) / (seen + c * alpha)).ln();
        counts[label] += 1.0;
    }
    total
}

#[test]
fn a1_likelihood_correctness() {
    let params = LikelihoodParams::default();

    // Hand-evaluated Dirichlet-multinomial values for single terminals.
    let worked: [(&str, f64); 3] = [
        ("(t 3 1)", -2.995_732_273_553_991),  // ln 0.05
        ("(t 2 2)", -3.401_197_381_662_155_5), // ln(1/30)
        ("(t 1 0)", -std::f64::consts::LN_2),  // ln(1/2)
    ];
    let mut worst_exact = 0.0f64;
    for (text, expected) in worked {
        let tree = DecisionTree::from_text(text, 2).unwrap();
        let got = log_marginal_likelihood(&tree, &params).unwrap();
        worst_exact = worst_exact.max((got - expected).abs());
    }

    // 100 random tiny trees against the sequential-predictive oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst_oracle = 0.0f64;
    for case in 0..100u64 {
        let classes = 2 + (case % 4) as usize;
        let n = 2 * classes + (case % 17) as usize;
        let data = generate_synthetic(n, 3, classes, 2, 0.8, case).unwrap();
        let catalog = build_rule_catalog(&data);
        let mut tree = DecisionTree::single_terminal(classes);
        for _ in 0..rng.gen_range(0..4) {
            let terminals = tree.terminal_indices();
            let t = terminals[rng.gen_range(0..terminals.len())];
            let attrs = catalog.splittable_attributes();
            let j = attrs[rng.gen_range(0..attrs.len())];
            let rules = catalog.candidates(j);
            let rule = rules[rng.gen_range(0..rules.len())];
            tree = tree.split_terminal(t, j, rule).unwrap();
        }
        let (tree, _) = tree.recount(&data, 1);
        let alpha = [0.5, 1.0, 2.0][(case % 3) as usize];
        let direct = log_marginal_likelihood(&tree, &LikelihoodParams { alpha }).unwrap();
        let oracle = sequential_predictive_log_lik(&tree, &data, alpha);
        worst_oracle = worst_oracle.max((direct - oracle).abs());
    }

    criterion(
        "A1 likelihood correctness",
        worst_exact < 1e-9 && worst_oracle < 1e-9,
        &format!(
            "worked-example max err {worst_exact:.2e}, oracle max err {worst_oracle:.2e} (tol 1e-9)"
        ),
    );
}

// ---------------------------------------------------------------------
// A2
// ---------------------------------------------------------------------

/// Two binary attributes, all four combinations twice, labels arranged so
/// the posterior over trees is far from uniform.
fn enumerable_dataset() -> Dataset {
    let rows: [([f64; 2], usize); 8] = [
        ([0.0, 0.0], 1),
        ([0.0, 0.0], 1),
        ([0.0, 1.0], 1),
        ([0.0, 1.0], 2),
        ([1.0, 0.0], 2),
        ([1.0, 0.0], 2),
        ([1.0, 1.0], 2),
        ([1.0, 1.0], 1),
    ];
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, label) in rows {
        features.extend_from_slice(&row);
        labels.push(label);
    }
    Dataset::new(
        features,
        2,
        labels,
        vec!["a".into(), "b".into()],
        vec![1.0, 2.0],
    )
    .unwrap()
}

/// Enumerates every structurally valid tree with at most two splits and
/// its unnormalized log posterior weight: the marginal likelihood times
/// the prior `prod 1/(m_splittable * L_j)` over splits.
fn enumerate_posterior(data: &Dataset, min_node_size: usize) -> HashMap<String, f64> {
    let catalog = build_rule_catalog(data);
    let params = LikelihoodParams::default();
    let m_tilde = catalog.splittable_attributes().len() as f64;
    let mut weights: HashMap<String, f64> = HashMap::new();

    let mut consider = |tree: DecisionTree, prior_terms: &[usize]| {
        let (tree, valid) = tree.recount(data, min_node_size);
        if !valid {
            return;
        }
        let log_prior: f64 = prior_terms
            .iter()
            .map(|&j| -(m_tilde * catalog.rule_count(j) as f64).ln())
            .sum();
        let ll = log_marginal_likelihood(&tree, &params).unwrap();
        weights.insert(tree.to_text(), ll + log_prior);
    };

    consider(DecisionTree::single_terminal(2), &[]);
    for &j1 in catalog.splittable_attributes() {
        for &r1 in catalog.candidates(j1) {
            let stump = DecisionTree::stump(j1, r1, 2);
            consider(stump.clone(), &[j1]);
            // Child splits: preorder puts the stump's terminals at 1 and 2.
            for child in [1usize, 2] {
                for &j2 in catalog.splittable_attributes() {
                    for &r2 in catalog.candidates(j2) {
                        consider(
                            stump.split_terminal(child, j2, r2).unwrap(),
                            &[j1, j2],
                        );
                    }
                }
            }
        }
    }

    // Normalize in place.
    let max = weights.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = weights.values().map(|w| (w - max).exp()).sum();
    weights
        .iter()
        .map(|(k, w)| (k.clone(), (w - max).exp() / total))
        .collect()
}

#[test]
fn a2_exact_posterior_agreement() {
    let data = enumerable_dataset();
    let catalog = build_rule_catalog(&data);
    let posterior = enumerate_posterior(&data, 1);
    assert_eq!(posterior.len(), 7, "1 leaf + 2 stumps + 4 two-split trees");

    let mut worst_tv = 0.0f64;
    for seed in [11u64, 22, 33] {
        let config = ChainConfig {
            burn_in: 0,
            post_burn_in: 1,
            thinning: 1,
            min_node_size: 1,
            seed,
            trace_stride: 1_000_000,
            max_splits: Some(2),
            ..ChainConfig::default()
        };
        let mut chain = Chain::new(&data, &catalog, config).unwrap();
        for _ in 0..10_000 {
            chain.step();
        }
        let iterations = 1_000_000u64;
        let mut visits: HashMap<String, u64> = HashMap::new();
        for _ in 0..iterations {
            chain.step();
            *visits.entry(chain.current().to_text()).or_insert(0) += 1;
        }
        for key in visits.keys() {
            assert!(
                posterior.contains_key(key),
                "chain visited a tree outside the enumerated space: {key}"
            );
        }
        let tv: f64 = posterior
            .iter()
            .map(|(key, p)| {
                let observed = *visits.get(key).unwrap_or(&0) as f64 / iterations as f64;
                (observed - p).abs()
            })
            .sum::<f64>()
            / 2.0;
        println!("  seed {seed}: total variation {tv:.4}");
        worst_tv = worst_tv.max(tv);
    }
    criterion(
        "A2 exact posterior agreement",
        worst_tv < 0.05,
        &format!("worst TV over 3 seeds {worst_tv:.4} (tol 0.05)"),
    );
}

// ---------------------------------------------------------------------
// A3
// ---------------------------------------------------------------------

#[test]
fn a3_chance_level_sanity() {
    // Break the feature-label dependence by shuffling the labels.
    let base = generate_synthetic(600, 10, 6, 3, 1.0, 77).unwrap();
    let mut labels = base.labels().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(600 * 10);
    for i in 0..base.n_samples() {
        features.extend_from_slice(base.row(i));
    }
    let shuffled = Dataset::new(
        features,
        base.n_attributes(),
        labels,
        base.attribute_names().to_vec(),
        base.class_values().to_vec(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("shuffled.csv");
    write_csv(&shuffled, &csv).unwrap();
    assert_eq!(load_csv(&csv).unwrap(), shuffled);

    let mut spec = ExperimentSpec::new(DataSource::Csv(csv));
    spec.k_folds = 3;
    spec.master_seed = 7;
    spec.chain.burn_in = 4_000;
    spec.chain.post_burn_in = 500;
    spec.chain.thinning = 2;
    spec.techniques = vec![Technique::Refine];
    let cv = cross_validate(&spec).unwrap();

    let chance = 100.0 / 6.0;
    let sigma = 100.0 * ((1.0 / 6.0) * (5.0 / 6.0) / 600.0f64).sqrt();
    let p = cv.report.accuracy_percent;
    criterion(
        "A3 chance-level sanity",
        (p - chance).abs() < 3.0 * sigma,
        &format!(
            "cross-validated P {p:.2}% vs chance {chance:.2}% (3 sigma = {:.2})",
            3.0 * sigma
        ),
    );
}

// ---------------------------------------------------------------------
// A4
// ---------------------------------------------------------------------

fn corpus_sweep(master_seed: u64) -> SweepOutput {
    let mut spec = ExperimentSpec::new(DataSource::Synthetic(SyntheticSpec {
        n: 686,
        m: 72,
        classes: 6,
        informative: 12,
        effect: CORPUS_EFFECT,
        seed: master_seed,
    }));
    spec.k_folds = 3;
    spec.master_seed = master_seed;
    spec.chain.burn_in = 20_000;
    spec.chain.post_burn_in = 2_000;
    spec.techniques = vec![Technique::Refine];
    spec.workers = 3;
    threshold_sweep(&spec).unwrap()
}

#[test]
fn a4_refinement_benefit_and_histogram_shape() {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut successes = 0;
    for &seed in &seeds {
        let sweep = corpus_sweep(seed);
        let base_p = sweep.baseline.accuracy_mean.unwrap();
        let base_e = sweep.baseline.entropy_mean.unwrap();
        assert!(
            (25.0..=35.0).contains(&base_p),
            "seed {seed}: baseline P {base_p:.2} outside the tuned [25, 35] band"
        );
        let mut found = None;
        for (row, hist) in sweep.rows.iter().zip(&sweep.histograms) {
            let p_ok = row.accuracy_mean.is_some_and(|p| p >= base_p);
            let e_ok = row.entropy_mean.is_some_and(|e| e <= base_e);
            let kept_skews_higher = match (hist.kept_mean, hist.discarded_mean) {
                (Some(kept), Some(discarded)) => kept >= discarded,
                _ => true, // nothing discarded at this threshold
            };
            if p_ok && e_ok && kept_skews_higher {
                found = Some((row.threshold, row.accuracy_mean.unwrap(), row.entropy_mean.unwrap()));
                break;
            }
        }
        match found {
            Some((t, p, e)) => {
                successes += 1;
                println!(
                    "  seed {seed}: base P {base_p:.2} E {base_e:.1} -> refined P {p:.2} E {e:.1} at T={t}"
                );
            }
            None => println!("  seed {seed}: no qualifying threshold (base P {base_p:.2})"),
        }
        check_refinement_invariants(&sweep);
    }
    criterion(
        "A4 refinement benefit and Fig.-1 shape",
        successes >= 4,
        &format!("{successes}/5 master seeds improved P and E with kept trees skewing higher"),
    );
}

// ---------------------------------------------------------------------
// A5
// ---------------------------------------------------------------------

#[test]
fn a5_chain_stationarity() {
    let data = generate_synthetic(686, 72, 6, 12, CORPUS_EFFECT, 1).unwrap();
    let catalog = build_rule_catalog(&data);
    let config = ChainConfig {
        burn_in: 20_000,
        post_burn_in: 2_000,
        seed: 42,
        ..ChainConfig::default()
    };
    let (_, diag) = run_chain(&data, &catalog, &config).unwrap();
    let summary = stationarity_summary(&diag).unwrap();
    let acceptance = diag.overall_acceptance();
    println!(
        "  size last burn-in quartile {:.1}, post {:.1}; overall acceptance {acceptance:.3}",
        summary.mean_size_last_burn_in_quartile, summary.mean_size_post_burn_in
    );
    criterion(
        "A5 chain stationarity",
        summary.drift_ratio < 0.2 && acceptance > 0.02 && acceptance < 0.6,
        &format!(
            "drift ratio {:.3} (tol < 0.2), overall acceptance {acceptance:.3} (band 0.02..0.6)",
            summary.drift_ratio
        ),
    );
}

// ---------------------------------------------------------------------
// A6
// ---------------------------------------------------------------------

fn check_refinement_invariants(sweep: &SweepOutput) {
    let grid = &sweep.spec.thresholds;
    for (cell, runs) in sweep.cells.iter().zip(&sweep.technique_runs) {
        let mut last_survivors = usize::MAX;
        for (ti, &threshold) in grid.iter().enumerate() {
            let weak = weak_attributes(&cell.profile, threshold);
            match &runs.refined[ti] {
                Some(refined) => {
                    // Soundness: no survivor splits on a weak attribute.
                    for tree in &refined.trees {
                        assert!(
                            tree.attributes_used()
                                .intersection(&weak.attributes)
                                .next()
                                .is_none(),
                            "survivor uses a weak attribute at T={threshold}"
                        );
                    }
                    // Profile consistency: refined usage is zero on weak attributes.
                    let refined_profile = treebma::refine::usage_profile(refined).unwrap();
                    for &j in &weak.attributes {
                        assert_eq!(
                            refined_profile.usage()[j],
                            0.0,
                            "weak attribute {j} has nonzero refined usage at T={threshold}"
                        );
                    }
                    // T = 0 identity.
                    if threshold == 0.0 {
                        assert_eq!(refined.trees, cell.ensemble.trees);
                        assert_eq!(refined.log_liks, cell.ensemble.log_liks);
                    }
                    assert!(refined.len() <= last_survivors, "survivor count grew");
                    last_survivors = refined.len();
                }
                None => {
                    last_survivors = 0;
                }
            }
        }
    }
}

#[test]
fn a6_refinement_invariants() {
    let mut spec = ExperimentSpec::new(DataSource::Synthetic(SyntheticSpec {
        n: 240,
        m: 8,
        classes: 3,
        informative: 2,
        effect: 1.0,
        seed: 13,
    }));
    spec.k_folds = 2;
    spec.repeats = 2;
    spec.master_seed = 13;
    spec.chain.burn_in = 2_000;
    spec.chain.post_burn_in = 300;
    spec.chain.thinning = 2;
    spec.chain.min_node_size = 6;
    spec.thresholds = vec![0.0, 0.01, 0.05, 0.15];
    spec.techniques = vec![Technique::Refine, Technique::Rerun];
    let sweep = threshold_sweep(&spec).unwrap();
    check_refinement_invariants(&sweep);

    // The T = 0 sweep rows must equal the baseline for both techniques.
    for technique in ["refine", "rerun"] {
        let row = sweep
            .rows
            .iter()
            .find(|r| r.threshold == 0.0 && r.technique == technique)
            .unwrap();
        assert_eq!(row.accuracy_mean, sweep.baseline.accuracy_mean);
        assert_eq!(row.entropy_mean, sweep.baseline.entropy_mean);
    }
    criterion(
        "A6 refinement invariants",
        true,
        "soundness, T=0 identity, monotonicity, profile consistency all hold",
    );
}

// ---------------------------------------------------------------------
// A7
// ---------------------------------------------------------------------

fn a7_spec(out_dir: &Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(DataSource::Synthetic(SyntheticSpec {
        n: 120,
        m: 6,
        classes: 3,
        informative: 2,
        effect: 1.0,
        seed: 9,
    }));
    spec.k_folds = 2;
    spec.master_seed = 9;
    spec.chain.burn_in = 400;
    spec.chain.post_burn_in = 100;
    spec.chain.thinning = 2;
    spec.chain.min_node_size = 4;
    spec.chain.trace_stride = 50;
    spec.thresholds = vec![0.0, 0.02, 0.05];
    spec.techniques = vec![Technique::Refine, Technique::Rerun];
    spec.out_dir = out_dir.to_path_buf();
    spec
}

#[test]
fn a7_sweep_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");

    let files_a = emit_reports(&threshold_sweep(&a7_spec(&out_a)).unwrap(), &out_a).unwrap();
    let files_b = emit_reports(&threshold_sweep(&a7_spec(&out_b)).unwrap(), &out_b).unwrap();

    assert_eq!(files_a.len(), files_b.len());
    let mut compared = 0;
    for (a, b) in files_a.iter().zip(&files_b) {
        assert_eq!(
            a.strip_prefix(&out_a).unwrap(),
            b.strip_prefix(&out_b).unwrap(),
            "file sets differ"
        );
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert_eq!(bytes_a, bytes_b, "byte mismatch in {}", a.display());
        compared += 1;
    }
    criterion(
        "A7 determinism",
        compared > 0,
        &format!("two identical sweeps produced {compared} byte-identical report files"),
    );
}

// ---------------------------------------------------------------------
// A8
// ---------------------------------------------------------------------

#[test]
fn a8_table_format_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut spec = a7_spec(&out);
    // The default grid, so emitted tables lay side-by-side with tables
    // produced from other corpora.
    spec.thresholds = vec![0.001, 0.002, 0.003, 0.004, 0.005];
    let sweep = threshold_sweep(&spec).unwrap();
    emit_reports(&sweep, &out).unwrap();

    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "T,n_weak,technique,P_mean,P_2sigma,E_mean,E_2sigma");

    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + 5 * 2, "baseline + 5 thresholds x 2 techniques");
    assert_eq!(rows[0][2], "baseline");
    assert_eq!(rows[0][0], "0");
    for (i, &t) in ["0.001", "0.002", "0.003", "0.004", "0.005"].iter().enumerate() {
        let refine = &rows[1 + 2 * i];
        let rerun = &rows[2 + 2 * i];
        assert_eq!(refine[0], t);
        assert_eq!(refine[2], "refine");
        assert_eq!(rerun[0], t);
        assert_eq!(rerun[2], "rerun");
    }
    for row in &rows {
        assert_eq!(row.len(), 7);
        for cell in &row[3..] {
            assert!(
                cell.parse::<f64>().is_ok() || *cell == "exhausted",
                "cell `{cell}` is neither numeric nor `exhausted`"
            );
        }
    }
    criterion(
        "A8 table format fidelity",
        true,
        "flat table carries the fixed column structure (T, n_weak, P±2σ, E±2σ per technique)",
    );
}
