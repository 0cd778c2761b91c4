//! Experiment orchestration: cross-validated baseline runs, threshold
//! sweeps comparing ensemble refinement against attribute discarding with
//! resampling, and deterministic report emission.
//!
//! Folds and repeats are independent work items; the fan-out runs on a
//! rayon pool, but every seed is derived from the master seed up front so
//! the output is identical regardless of scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bma::{evaluate, mean_and_two_sigma, per_tree_performance, EvaluationReport};
use crate::dataset::{build_rule_catalog, generate_synthetic, load_csv, Dataset, FoldPlan};
use crate::dataset::make_folds;
use crate::error::{Error, Result};
use crate::refine::{
    refine_ensemble, reduce_and_rerun, usage_profile, weak_attributes, ImportanceProfile,
};
use crate::sampler::{
    run_chain, stationarity_summary, ChainConfig, Diagnostics, Ensemble, MoveKind,
    StationaritySummary,
};

/// Performance histograms use fixed 2-percent bins over [0, 100].
pub const HIST_BIN_WIDTH: f64 = 2.0;
pub const HIST_BIN_COUNT: usize = 50;

/// SplitMix64 finalizer over `master + stream * golden`, so adding streams
/// (folds, repeats) never perturbs earlier ones.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub informative: usize,
    pub effect: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn describe(&self) -> String {
        match self {
            DataSource::Csv(path) => format!("csv:{}", path.display()),
            DataSource::Synthetic(s) => format!(
                "synthetic:n={},m={},classes={},informative={},effect={},seed={}",
                s.n, s.m, s.classes, s.informative, s.effect, s.seed
            ),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv(path) => load_csv(path),
            DataSource::Synthetic(s) => {
                generate_synthetic(s.n, s.m, s.classes, s.informative, s.effect, s.seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Technique {
    Refine,
    Rerun,
}

impl Technique {
    pub fn label(&self) -> &'static str {
        match self {
            Technique::Refine => "refine",
            Technique::Rerun => "rerun",
        }
    }
}

/// Everything a sweep needs: data source, folds, chain settings, the
/// threshold grid, techniques to compare, and the master seed that every
/// per-cell seed is mixed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub k_folds: usize,
    pub chain: ChainConfig,
    pub thresholds: Vec<f64>,
    pub techniques: Vec<Technique>,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub repeats: usize,
    pub workers: usize,
}

impl ExperimentSpec {
    /// Defaults around a data source: 3 folds, the reference chain
    /// settings, the 0.001..0.005 grid, both techniques.
    pub fn new(data: DataSource) -> Self {
        ExperimentSpec {
            data,
            k_folds: 3,
            chain: ChainConfig::default(),
            thresholds: vec![0.001, 0.002, 0.003, 0.004, 0.005],
            techniques: vec![Technique::Refine, Technique::Rerun],
            out_dir: PathBuf::from("treebma-out"),
            master_seed: 0,
            repeats: 1,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        if self.k_folds < 2 {
            return Err(Error::Config("k_folds must be at least 2".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.techniques.is_empty() {
            return Err(Error::Config("no technique selected".into()));
        }
        if self.thresholds.iter().any(|&t| t.is_nan() || t < 0.0) {
            return Err(Error::Config("thresholds must be >= 0".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    fn run_technique(&self, technique: Technique) -> bool {
        self.techniques.contains(&technique)
    }
}

const CONFIG_KEYS: &[&str] = &[
    "data",
    "n",
    "m",
    "classes",
    "informative",
    "effect",
    "seed",
    "k_folds",
    "burn_in",
    "post_burn_in",
    "thinning",
    "min_node_size",
    "move_probs",
    "proposal_variance",
    "alpha",
    "trace_stride",
    "thresholds",
    "techniques",
    "out_dir",
    "repeats",
    "workers",
];

/// Parses a flat `key = value` document: one pair per line, `#` comments,
/// blank lines ignored. Unknown and duplicate keys are errors.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", line_no + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "line {}: unknown key `{key}`",
                line_no + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{key}`",
                line_no + 1
            )));
        }
    }
    Ok(map)
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_list_f64(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_as::<f64>(key, v.trim()))
        .collect()
}

/// Builds an [`ExperimentSpec`] from layered key-value maps; later layers
/// win. The `seed` key is both the master seed and, in synthetic mode, the
/// generator seed.
pub fn build_spec(layers: &[&BTreeMap<String, String>]) -> Result<ExperimentSpec> {
    let mut merged: BTreeMap<String, String> = BTreeMap::new();
    for layer in layers {
        for (k, v) in *layer {
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }

    let seed: u64 = match merged.get("seed") {
        Some(v) => parse_as("seed", v)?,
        None => 0,
    };

    let has_synth = ["n", "m", "classes", "informative", "effect"]
        .iter()
        .any(|k| merged.contains_key(*k));
    let data = match (merged.get("data"), has_synth) {
        (Some(_), true) => {
            return Err(Error::Config(
                "both `data` and synthetic keys were given".into(),
            ))
        }
        (Some(path), false) => DataSource::Csv(PathBuf::from(path)),
        (None, true) => {
            let m: usize = parse_as("m", merged.get("m").map(String::as_str).unwrap_or("72"))?;
            DataSource::Synthetic(SyntheticSpec {
                n: parse_as("n", merged.get("n").map(String::as_str).unwrap_or("686"))?,
                m,
                classes: parse_as(
                    "classes",
                    merged.get("classes").map(String::as_str).unwrap_or("6"),
                )?,
                informative: match merged.get("informative") {
                    Some(v) => parse_as("informative", v)?,
                    None => 12.min(m),
                },
                effect: parse_as(
                    "effect",
                    merged.get("effect").map(String::as_str).unwrap_or("0.5"),
                )?,
                seed,
            })
        }
        (None, false) => {
            return Err(Error::Config(
                "no data source: give `data = <csv>` or synthetic keys".into(),
            ))
        }
    };

    let mut spec = ExperimentSpec::new(data);
    spec.master_seed = seed;
    spec.chain.seed = seed;
    if let Some(v) = merged.get("k_folds") {
        spec.k_folds = parse_as("k_folds", v)?;
    }
    if let Some(v) = merged.get("burn_in") {
        spec.chain.burn_in = parse_as("burn_in", v)?;
    }
    if let Some(v) = merged.get("post_burn_in") {
        spec.chain.post_burn_in = parse_as("post_burn_in", v)?;
    }
    if let Some(v) = merged.get("thinning") {
        spec.chain.thinning = parse_as("thinning", v)?;
    }
    if let Some(v) = merged.get("min_node_size") {
        spec.chain.min_node_size = parse_as("min_node_size", v)?;
    }
    if let Some(v) = merged.get("proposal_variance") {
        spec.chain.proposal_variance = parse_as("proposal_variance", v)?;
    }
    if let Some(v) = merged.get("alpha") {
        spec.chain.alpha = parse_as("alpha", v)?;
    }
    if let Some(v) = merged.get("trace_stride") {
        spec.chain.trace_stride = parse_as("trace_stride", v)?;
    }
    if let Some(v) = merged.get("move_probs") {
        let probs = parse_list_f64("move_probs", v)?;
        if probs.len() != 4 {
            return Err(Error::Config(
                "move_probs needs 4 values: birth,death,change_split,change_rule".into(),
            ));
        }
        spec.chain.move_probs = [probs[0], probs[1], probs[2], probs[3]];
    }
    if let Some(v) = merged.get("thresholds") {
        spec.thresholds = parse_list_f64("thresholds", v)?;
    }
    if let Some(v) = merged.get("techniques") {
        spec.techniques = match v.as_str() {
            "both" => vec![Technique::Refine, Technique::Rerun],
            "refine" => vec![Technique::Refine],
            "rerun" => vec![Technique::Rerun],
            other => {
                return Err(Error::Config(format!(
                    "techniques must be refine, rerun, or both, got `{other}`"
                )))
            }
        };
    }
    if let Some(v) = merged.get("out_dir") {
        spec.out_dir = PathBuf::from(v);
    }
    if let Some(v) = merged.get("repeats") {
        spec.repeats = parse_as("repeats", v)?;
    }
    if let Some(v) = merged.get("workers") {
        spec.workers = parse_as("workers", v)?;
    }
    spec.validate()?;
    Ok(spec)
}

/// One evaluation unit: a (fold, repeat) pair with its trained baseline
/// ensemble and everything the sweep derives from it.
#[derive(Debug, Clone)]
pub struct BaselineCell {
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub train: Dataset,
    pub test: Dataset,
    pub ensemble: Ensemble,
    pub diagnostics: Diagnostics,
    pub profile: ImportanceProfile,
    pub accuracy: f64,
    pub entropy: f64,
    pub per_tree_accuracy: Vec<f64>,
}

fn run_baseline_cell(
    spec: &ExperimentSpec,
    data: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    repeat: usize,
) -> Result<BaselineCell> {
    let seed = mix_seed(spec.master_seed, (fold * spec.repeats + repeat) as u64 + 1);
    let (train, test) = plan.split(data, fold)?;
    let catalog = build_rule_catalog(&train);
    let mut config = spec.chain.clone();
    config.seed = seed;
    let (mut ensemble, diagnostics) = run_chain(&train, &catalog, &config)?;
    ensemble.provenance.fold_id = Some(fold as u32);
    ensemble.provenance.repeat = Some(repeat as u32);
    let (accuracy, entropy) = evaluate(&ensemble, &test, config.alpha)?;
    let per_tree_accuracy = per_tree_performance(&ensemble, &test, config.alpha)?;
    let profile = usage_profile(&ensemble)?;
    Ok(BaselineCell {
        fold,
        repeat,
        seed,
        train,
        test,
        ensemble,
        diagnostics,
        profile,
        accuracy,
        entropy,
        per_tree_accuracy,
    })
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        job()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(job)
    }
}

fn run_all_cells(spec: &ExperimentSpec, data: &Dataset, plan: &FoldPlan) -> Result<Vec<BaselineCell>> {
    let cells: Vec<(usize, usize)> = (0..spec.k_folds)
        .flat_map(|f| (0..spec.repeats).map(move |r| (f, r)))
        .collect();
    with_pool(spec.workers, || {
        cells
            .par_iter()
            .map(|&(fold, repeat)| run_baseline_cell(spec, data, plan, fold, repeat))
            .collect()
    })
}

/// Baseline cross-validation: one chain per (fold, repeat), evaluated on
/// the held-out fold, aggregated as mean and 2-sigma.
pub struct CrossValidation {
    pub report: EvaluationReport,
    pub cells: Vec<BaselineCell>,
    pub dataset_digest: String,
}

pub fn cross_validate(spec: &ExperimentSpec) -> Result<CrossValidation> {
    spec.validate()?;
    let data = spec.data.load()?;
    let plan = make_folds(&data, spec.k_folds, mix_seed(spec.master_seed, 0))?;
    let cells = run_all_cells(spec, &data, &plan)?;
    let report =
        EvaluationReport::from_folds(cells.iter().map(|c| (c.accuracy, c.entropy)).collect())?;
    Ok(CrossValidation {
        report,
        cells,
        dataset_digest: data.digest(),
    })
}

/// Per-cell outcome of one technique at one threshold.
#[derive(Debug, Clone, Serialize)]
pub struct CellEval {
    pub fold: usize,
    pub repeat: usize,
    pub n_weak: usize,
    /// Survivor count (refine technique only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retained: Option<usize>,
    pub exhausted: bool,
    pub accuracy: Option<f64>,
    pub entropy: Option<f64>,
}

/// Aggregated sweep row for one (threshold, technique).
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub technique: String,
    pub n_weak_mean: f64,
    pub evaluated_cells: usize,
    pub exhausted_cells: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_2sigma: Option<f64>,
    pub entropy_mean: Option<f64>,
    pub entropy_2sigma: Option<f64>,
    pub per_cell: Vec<CellEval>,
}

fn aggregate_row(threshold: f64, technique: &str, per_cell: Vec<CellEval>) -> SweepRow {
    let evaluated: Vec<(f64, f64)> = per_cell
        .iter()
        .filter(|c| !c.exhausted)
        .map(|c| (c.accuracy.unwrap(), c.entropy.unwrap()))
        .collect();
    let n_weak_mean =
        per_cell.iter().map(|c| c.n_weak as f64).sum::<f64>() / per_cell.len().max(1) as f64;
    let exhausted_cells = per_cell.iter().filter(|c| c.exhausted).count();
    let (accuracy_mean, accuracy_2sigma, entropy_mean, entropy_2sigma) = if evaluated.is_empty() {
        (None, None, None, None)
    } else {
        let (p, e): (Vec<f64>, Vec<f64>) = evaluated.iter().copied().unzip();
        let (pm, ps) = mean_and_two_sigma(&p);
        let (em, es) = mean_and_two_sigma(&e);
        (Some(pm), Some(ps), Some(em), Some(es))
    };
    SweepRow {
        threshold,
        technique: technique.to_string(),
        n_weak_mean,
        evaluated_cells: evaluated.len(),
        exhausted_cells,
        accuracy_mean,
        accuracy_2sigma,
        entropy_mean,
        entropy_2sigma,
        per_cell,
    }
}

/// Pooled per-tree accuracy histogram at one threshold: original ensembles
/// against the survivors of refinement, in fixed 2-percent bins.
#[derive(Debug, Clone, Serialize)]
pub struct HistogramBlock {
    pub threshold: f64,
    pub bin_width: f64,
    pub original_counts: Vec<u64>,
    pub refined_counts: Vec<u64>,
    pub kept_mean: Option<f64>,
    pub discarded_mean: Option<f64>,
}

fn bin_of(accuracy: f64) -> usize {
    ((accuracy / HIST_BIN_WIDTH) as usize).min(HIST_BIN_COUNT - 1)
}

/// Per-cell technique outputs kept for persistence.
#[derive(Debug, Clone)]
pub struct CellTechniqueRuns {
    /// Refined ensembles per threshold index; `None` where exhausted.
    pub refined: Vec<Option<Ensemble>>,
    /// Rerun ensembles per threshold index; `None` where infeasible.
    pub rerun: Vec<Option<Ensemble>>,
}

/// Everything a sweep produced, ready for report emission.
pub struct SweepOutput {
    pub spec: ExperimentSpec,
    pub dataset_digest: String,
    pub baseline: SweepRow,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<BaselineCell>,
    pub technique_runs: Vec<CellTechniqueRuns>,
    pub histograms: Vec<HistogramBlock>,
}

/// Runs the full sweep: per cell, profile the baseline ensemble once, then
/// apply each technique at every grid threshold and evaluate on the cell's
/// test fold. Exhausted cells are marked and the sweep continues.
pub fn threshold_sweep(spec: &ExperimentSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let data = spec.data.load()?;
    let plan = make_folds(&data, spec.k_folds, mix_seed(spec.master_seed, 0))?;
    let cells = run_all_cells(spec, &data, &plan)?;

    struct PerCell {
        refine_evals: Vec<CellEval>,
        rerun_evals: Vec<CellEval>,
        runs: CellTechniqueRuns,
        survivor_masks: Vec<Option<Vec<bool>>>,
    }

    let per_cell: Vec<PerCell> = with_pool(spec.workers, || {
        cells
            .par_iter()
            .map(|cell| -> Result<PerCell> {
                let mut refine_evals = Vec::new();
                let mut rerun_evals = Vec::new();
                let mut refined = Vec::new();
                let mut rerun = Vec::new();
                let mut survivor_masks = Vec::new();
                let alpha = spec.chain.alpha;
                for &threshold in &spec.thresholds {
                    let weak = weak_attributes(&cell.profile, threshold);
                    if spec.run_technique(Technique::Refine) {
                        match refine_ensemble(&cell.ensemble, &weak) {
                            Ok(refined_ensemble) => {
                                let (p, e) = evaluate(&refined_ensemble, &cell.test, alpha)?;
                                let mask: Vec<bool> = cell
                                    .ensemble
                                    .trees
                                    .iter()
                                    .map(|t| {
                                        t.attributes_used()
                                            .intersection(&weak.attributes)
                                            .next()
                                            .is_none()
                                    })
                                    .collect();
                                refine_evals.push(CellEval {
                                    fold: cell.fold,
                                    repeat: cell.repeat,
                                    n_weak: weak.n_weak(),
                                    retained: Some(refined_ensemble.len()),
                                    exhausted: false,
                                    accuracy: Some(p),
                                    entropy: Some(e),
                                });
                                refined.push(Some(refined_ensemble));
                                survivor_masks.push(Some(mask));
                            }
                            Err(Error::RefinementExhausted { .. }) => {
                                refine_evals.push(CellEval {
                                    fold: cell.fold,
                                    repeat: cell.repeat,
                                    n_weak: weak.n_weak(),
                                    retained: Some(0),
                                    exhausted: true,
                                    accuracy: None,
                                    entropy: None,
                                });
                                refined.push(None);
                                survivor_masks.push(None);
                            }
                            Err(e) => return Err(e),
                        }
                    } else {
                        refined.push(None);
                        survivor_masks.push(None);
                    }
                    if spec.run_technique(Technique::Rerun) {
                        let mut config = spec.chain.clone();
                        config.seed = cell.seed;
                        match reduce_and_rerun(&cell.train, &weak, &config) {
                            Ok((mut ensemble, _)) => {
                                ensemble.provenance.fold_id = Some(cell.fold as u32);
                                ensemble.provenance.repeat = Some(cell.repeat as u32);
                                let m = cell.train.n_attributes();
                                let kept: Vec<usize> =
                                    (0..m).filter(|j| !weak.attributes.contains(j)).collect();
                                let test = cell.test.project_columns(&kept)?;
                                let (p, e) = evaluate(&ensemble, &test, alpha)?;
                                rerun_evals.push(CellEval {
                                    fold: cell.fold,
                                    repeat: cell.repeat,
                                    n_weak: weak.n_weak(),
                                    retained: None,
                                    exhausted: false,
                                    accuracy: Some(p),
                                    entropy: Some(e),
                                });
                                rerun.push(Some(ensemble));
                            }
                            Err(Error::Parameter(_)) | Err(Error::ChainInit(_)) => {
                                rerun_evals.push(CellEval {
                                    fold: cell.fold,
                                    repeat: cell.repeat,
                                    n_weak: weak.n_weak(),
                                    retained: None,
                                    exhausted: true,
                                    accuracy: None,
                                    entropy: None,
                                });
                                rerun.push(None);
                            }
                            Err(e) => return Err(e),
                        }
                    } else {
                        rerun.push(None);
                    }
                }
                Ok(PerCell {
                    refine_evals,
                    rerun_evals,
                    runs: CellTechniqueRuns { refined, rerun },
                    survivor_masks,
                })
            })
            .collect()
    })?;

    let baseline = aggregate_row(
        0.0,
        "baseline",
        cells
            .iter()
            .map(|c| CellEval {
                fold: c.fold,
                repeat: c.repeat,
                n_weak: 0,
                retained: Some(c.ensemble.len()),
                exhausted: false,
                accuracy: Some(c.accuracy),
                entropy: Some(c.entropy),
            })
            .collect(),
    );

    let mut rows = Vec::new();
    let mut histograms = Vec::new();
    for (ti, &threshold) in spec.thresholds.iter().enumerate() {
        if spec.run_technique(Technique::Refine) {
            let evals: Vec<CellEval> = per_cell
                .iter()
                .map(|pc| pc.refine_evals[ti].clone())
                .collect();
            rows.push(aggregate_row(threshold, Technique::Refine.label(), evals));

            let mut original_counts = vec![0u64; HIST_BIN_COUNT];
            let mut refined_counts = vec![0u64; HIST_BIN_COUNT];
            let mut kept = Vec::new();
            let mut discarded = Vec::new();
            for (cell, pc) in cells.iter().zip(&per_cell) {
                for (i, &acc) in cell.per_tree_accuracy.iter().enumerate() {
                    original_counts[bin_of(acc)] += 1;
                    if let Some(mask) = &pc.survivor_masks[ti] {
                        if mask[i] {
                            refined_counts[bin_of(acc)] += 1;
                            kept.push(acc);
                        } else {
                            discarded.push(acc);
                        }
                    }
                }
            }
            let mean = |v: &[f64]| {
                if v.is_empty() {
                    None
                } else {
                    Some(v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            histograms.push(HistogramBlock {
                threshold,
                bin_width: HIST_BIN_WIDTH,
                original_counts,
                refined_counts,
                kept_mean: mean(&kept),
                discarded_mean: mean(&discarded),
            });
        }
        if spec.run_technique(Technique::Rerun) {
            let evals: Vec<CellEval> = per_cell
                .iter()
                .map(|pc| pc.rerun_evals[ti].clone())
                .collect();
            rows.push(aggregate_row(threshold, Technique::Rerun.label(), evals));
        }
    }

    Ok(SweepOutput {
        spec: spec.clone(),
        dataset_digest: data.digest(),
        baseline,
        rows,
        cells,
        technique_runs: per_cell.into_iter().map(|pc| pc.runs).collect(),
        histograms,
    })
}

/// Renders with 4 significant digits in plain decimal form.
pub fn format_sig4(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn render_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format_sig4(v),
        None => "exhausted".to_string(),
    }
}

#[derive(Serialize)]
struct MoveStat {
    r#move: &'static str,
    proposals: u64,
    acceptances: u64,
    rate: f64,
}

#[derive(Serialize)]
struct DiagnosticsSummary {
    overall_acceptance: f64,
    per_move: Vec<MoveStat>,
    /// Absent when the trace is too sparse to cover both phases.
    stationarity: Option<StationaritySummary>,
}

#[derive(Serialize)]
struct WeakSetReport {
    threshold: f64,
    n_weak: usize,
    attributes: Vec<String>,
}

#[derive(Serialize)]
struct CellReport {
    fold: usize,
    repeat: usize,
    seed: u64,
    baseline_accuracy: f64,
    baseline_entropy: f64,
    baseline_ensemble_file: String,
    baseline_ensemble_digest: String,
    trace_file: String,
    diagnostics: DiagnosticsSummary,
    /// The cell's weak set at every grid threshold, by attribute name.
    weak_sets: Vec<WeakSetReport>,
}

#[derive(Serialize)]
struct EnsembleRef {
    file: String,
    digest: String,
    technique: String,
    threshold: f64,
    fold: usize,
    repeat: usize,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    format: &'static str,
    version: u32,
    data_source: String,
    dataset_digest: &'a str,
    master_seed: u64,
    k_folds: usize,
    repeats: usize,
    thresholds: &'a [f64],
    techniques: Vec<&'static str>,
    chain: &'a ChainConfig,
    entropy_convention: &'static str,
    baseline: &'a SweepRow,
    rows: &'a [SweepRow],
    cells: Vec<CellReport>,
    ensembles: Vec<EnsembleRef>,
    histogram_files: Vec<String>,
}

fn file_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let mut out = String::new();
    for b in hasher.finalize() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn threshold_tag(t: f64) -> String {
    format!("{t}")
}

/// Writes the full report set into `out_dir`:
///   report.json       full-precision structured document
///   table.csv         flat Table-1 mirror (4 significant digits)
///   hist_T<t>.csv     per-tree accuracy histograms, original vs refined
///   trace_f<f>_r<r>.csv  tree-size traces per cell
///   acceptance.csv    per-move acceptance counters per cell
///   ensembles/*.json  every ensemble the report references, with digests
///
/// Returns the written paths. Identical sweeps produce byte-identical
/// files.
pub fn emit_reports(output: &SweepOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let ensembles_dir = out_dir.join("ensembles");
    std::fs::create_dir_all(&ensembles_dir).map_err(|source| Error::Io {
        path: ensembles_dir.clone(),
        source,
    })?;

    let mut written = Vec::new();
    let mut ensemble_refs = Vec::new();
    let mut cell_reports = Vec::new();

    for cell in &output.cells {
        let name = format!("baseline_f{}_r{}.json", cell.fold, cell.repeat);
        let path = ensembles_dir.join(&name);
        cell.ensemble.write_file(&path)?;
        let digest = file_digest(&std::fs::read(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?);
        written.push(path);

        let trace_name = format!("trace_f{}_r{}.csv", cell.fold, cell.repeat);
        let mut trace = String::from("iteration,splits\n");
        for (it, size) in &cell.diagnostics.size_trace {
            let _ = writeln!(trace, "{it},{size}");
        }
        let trace_path = out_dir.join(&trace_name);
        write_out(&trace_path, trace.as_bytes())?;
        written.push(trace_path);

        let weak_sets = output
            .spec
            .thresholds
            .iter()
            .map(|&threshold| {
                let weak = weak_attributes(&cell.profile, threshold);
                WeakSetReport {
                    threshold,
                    n_weak: weak.n_weak(),
                    attributes: weak
                        .attributes
                        .iter()
                        .map(|&j| cell.ensemble.provenance.attribute_names[j].clone())
                        .collect(),
                }
            })
            .collect();
        cell_reports.push(CellReport {
            fold: cell.fold,
            repeat: cell.repeat,
            seed: cell.seed,
            baseline_accuracy: cell.accuracy,
            baseline_entropy: cell.entropy,
            baseline_ensemble_file: format!("ensembles/{name}"),
            baseline_ensemble_digest: digest,
            trace_file: trace_name,
            weak_sets,
            diagnostics: DiagnosticsSummary {
                overall_acceptance: cell.diagnostics.overall_acceptance(),
                per_move: MoveKind::ALL
                    .iter()
                    .map(|&k| MoveStat {
                        r#move: k.label(),
                        proposals: cell.diagnostics.proposals[k as usize],
                        acceptances: cell.diagnostics.acceptances[k as usize],
                        rate: cell.diagnostics.move_acceptance(k),
                    })
                    .collect(),
                stationarity: stationarity_summary(&cell.diagnostics).ok(),
            },
        });
    }

    for (ti, &threshold) in output.spec.thresholds.iter().enumerate() {
        for (cell, runs) in output.cells.iter().zip(&output.technique_runs) {
            let tag = threshold_tag(threshold);
            if let Some(ensemble) = &runs.refined[ti] {
                let name = format!("refine_T{tag}_f{}_r{}.json", cell.fold, cell.repeat);
                let path = ensembles_dir.join(&name);
                ensemble.write_file(&path)?;
                let digest = file_digest(&std::fs::read(&path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?);
                ensemble_refs.push(EnsembleRef {
                    file: format!("ensembles/{name}"),
                    digest,
                    technique: "refine".into(),
                    threshold,
                    fold: cell.fold,
                    repeat: cell.repeat,
                });
                written.push(path);
            }
            if let Some(ensemble) = &runs.rerun[ti] {
                let name = format!("rerun_T{tag}_f{}_r{}.json", cell.fold, cell.repeat);
                let path = ensembles_dir.join(&name);
                ensemble.write_file(&path)?;
                let digest = file_digest(&std::fs::read(&path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?);
                ensemble_refs.push(EnsembleRef {
                    file: format!("ensembles/{name}"),
                    digest,
                    technique: "rerun".into(),
                    threshold,
                    fold: cell.fold,
                    repeat: cell.repeat,
                });
                written.push(path);
            }
        }
    }

    // Flat Table-1 mirror.
    let mut table = String::from("T,n_weak,technique,P_mean,P_2sigma,E_mean,E_2sigma\n");
    let push_row = |row: &SweepRow, table: &mut String| {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            threshold_tag(row.threshold),
            format_sig4(row.n_weak_mean),
            row.technique,
            render_opt(row.accuracy_mean),
            render_opt(row.accuracy_2sigma),
            render_opt(row.entropy_mean),
            render_opt(row.entropy_2sigma),
        );
    };
    push_row(&output.baseline, &mut table);
    for row in &output.rows {
        push_row(row, &mut table);
    }
    let table_path = out_dir.join("table.csv");
    write_out(&table_path, table.as_bytes())?;
    written.push(table_path);

    // Histogram data per threshold (refine technique).
    let mut histogram_files = Vec::new();
    for block in &output.histograms {
        let name = format!("hist_T{}.csv", threshold_tag(block.threshold));
        let mut text = String::from("bin_low,bin_high,original_count,refined_count\n");
        for i in 0..HIST_BIN_COUNT {
            let low = i as f64 * block.bin_width;
            let high = low + block.bin_width;
            let _ = writeln!(
                text,
                "{low},{high},{},{}",
                block.original_counts[i], block.refined_counts[i]
            );
        }
        let path = out_dir.join(&name);
        write_out(&path, text.as_bytes())?;
        histogram_files.push(name);
        written.push(path);
    }

    // Acceptance-rate table.
    let mut acceptance = String::from("fold,repeat,move,proposals,acceptances,rate\n");
    for cell in &output.cells {
        for &kind in &MoveKind::ALL {
            let _ = writeln!(
                acceptance,
                "{},{},{},{},{},{}",
                cell.fold,
                cell.repeat,
                kind.label(),
                cell.diagnostics.proposals[kind as usize],
                cell.diagnostics.acceptances[kind as usize],
                cell.diagnostics.move_acceptance(kind)
            );
        }
        let _ = writeln!(
            acceptance,
            "{},{},overall,{},{},{}",
            cell.fold,
            cell.repeat,
            cell.diagnostics.proposals.iter().sum::<u64>(),
            cell.diagnostics.acceptances.iter().sum::<u64>(),
            cell.diagnostics.overall_acceptance()
        );
    }
    let acceptance_path = out_dir.join("acceptance.csv");
    write_out(&acceptance_path, acceptance.as_bytes())?;
    written.push(acceptance_path);

    let document = ReportDocument {
        format: "treebma-sweep-report",
        version: 1,
        data_source: output.spec.data.describe(),
        dataset_digest: &output.dataset_digest,
        master_seed: output.spec.master_seed,
        k_folds: output.spec.k_folds,
        repeats: output.spec.repeats,
        thresholds: &output.spec.thresholds,
        techniques: output.spec.techniques.iter().map(|t| t.label()).collect(),
        chain: &output.spec.chain,
        entropy_convention:
            "Shannon entropy in bits of the averaged predictive distribution, summed over test samples",
        baseline: &output.baseline,
        rows: &output.rows,
        cells: cell_reports,
        ensembles: ensemble_refs,
        histogram_files,
    };
    let json = serde_json::to_string_pretty(&document)
        .map_err(|e| Error::EnsembleFormat(e.to_string()))?;
    let report_path = out_dir.join("report.json");
    write_out(&report_path, format!("{json}\n").as_bytes())?;
    written.push(report_path);

    written.sort();
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(out: &Path) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(DataSource::Synthetic(SyntheticSpec {
            n: 90,
            m: 4,
            classes: 3,
            informative: 2,
            effect: 1.0,
            seed: 5,
        }));
        spec.k_folds = 2;
        spec.chain.burn_in = 150;
        spec.chain.post_burn_in = 40;
        spec.chain.thinning = 1;
        spec.chain.min_node_size = 3;
        spec.chain.trace_stride = 25;
        spec.thresholds = vec![0.0, 0.02, 0.2];
        spec.master_seed = 5;
        spec.out_dir = out.to_path_buf();
        spec
    }

    #[test]
    fn mix_seed_is_stable_and_spread() {
        assert_eq!(mix_seed(0, 0), mix_seed(0, 0));
        assert_ne!(mix_seed(0, 1), mix_seed(0, 2));
        assert_ne!(mix_seed(1, 1), mix_seed(2, 1));
        // Frozen value so the mixing function cannot drift silently.
        assert_eq!(mix_seed(7, 3), 0xe698_4080_bab1_2a02);
    }

    #[test]
    fn config_text_parsing() {
        let map = parse_config_text("burn_in = 100\n# comment\nseed=4\n").unwrap();
        assert_eq!(map.get("burn_in").unwrap(), "100");
        assert_eq!(map.get("seed").unwrap(), "4");
        assert!(matches!(
            parse_config_text("nonsense = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_text("seed = 1\nseed = 2\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse_config_text("seed 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn build_spec_layering() {
        let file = parse_config_text("n = 50\nm = 3\nclasses = 2\nseed = 9\nburn_in = 10\n").unwrap();
        let mut flags = BTreeMap::new();
        flags.insert("burn_in".to_string(), "20".to_string());
        let spec = build_spec(&[&file, &flags]).unwrap();
        assert_eq!(spec.chain.burn_in, 20);
        assert_eq!(spec.master_seed, 9);
        match &spec.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.n, 50);
                assert_eq!(s.seed, 9);
                assert_eq!(s.informative, 3, "default informative clamps to m");
            }
            _ => panic!("expected synthetic"),
        }
    }

    #[test]
    fn build_spec_needs_a_data_source() {
        let map = parse_config_text("burn_in = 10\n").unwrap();
        assert!(matches!(build_spec(&[&map]), Err(Error::Config(_))));
        let both = parse_config_text("data = x.csv\nn = 5\n").unwrap();
        assert!(matches!(build_spec(&[&both]), Err(Error::Config(_))));
    }

    #[test]
    fn build_spec_rejects_bad_grid() {
        let map =
            parse_config_text("n=60\nm=3\nclasses=2\ninformative=1\nthresholds = 0.2,0.1\n")
                .unwrap();
        assert!(matches!(build_spec(&[&map]), Err(Error::Config(_))));
    }

    #[test]
    fn sig4_rendering() {
        assert_eq!(format_sig4(478.34), "478.3");
        assert_eq!(format_sig4(27.384), "27.38");
        assert_eq!(format_sig4(0.0012345), "0.001234");
        assert_eq!(format_sig4(0.0), "0.000");
        assert_eq!(format_sig4(100.0), "100.0");
        assert_eq!(format_sig4(-27.384), "-27.38");
    }

    #[test]
    fn cross_validate_counts_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(dir.path());
        spec.thresholds = vec![0.01];
        let cv = cross_validate(&spec).unwrap();
        assert_eq!(cv.cells.len(), 2);
        assert_eq!(cv.report.per_fold.len(), 2);
        // Determinism.
        let again = cross_validate(&spec).unwrap();
        assert_eq!(cv.report, again.report);
    }

    #[test]
    fn sweep_t0_rows_equal_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(dir.path());
        let sweep = threshold_sweep(&spec).unwrap();
        let t0_refine = sweep
            .rows
            .iter()
            .find(|r| r.threshold == 0.0 && r.technique == "refine")
            .unwrap();
        let t0_rerun = sweep
            .rows
            .iter()
            .find(|r| r.threshold == 0.0 && r.technique == "rerun")
            .unwrap();
        assert_eq!(t0_refine.accuracy_mean, sweep.baseline.accuracy_mean);
        assert_eq!(t0_refine.entropy_mean, sweep.baseline.entropy_mean);
        assert_eq!(t0_rerun.accuracy_mean, sweep.baseline.accuracy_mean);
        assert_eq!(t0_rerun.entropy_mean, sweep.baseline.entropy_mean);
    }

    #[test]
    fn sweep_monotone_survivors_and_soundness() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(dir.path());
        let sweep = threshold_sweep(&spec).unwrap();
        for runs in &sweep.technique_runs {
            let mut last = usize::MAX;
            for refined in &runs.refined {
                let survivors = refined.as_ref().map(|e| e.len()).unwrap_or(0);
                assert!(survivors <= last);
                last = survivors;
            }
        }
        // Soundness: no survivor splits on a weak attribute.
        for (cell, runs) in sweep.cells.iter().zip(&sweep.technique_runs) {
            for (ti, refined) in runs.refined.iter().enumerate() {
                if let Some(ensemble) = refined {
                    let weak = weak_attributes(&cell.profile, spec.thresholds[ti]);
                    for tree in &ensemble.trees {
                        assert!(tree
                            .attributes_used()
                            .intersection(&weak.attributes)
                            .next()
                            .is_none());
                    }
                }
            }
        }
    }

    #[test]
    fn emit_reports_is_deterministic_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(&dir.path().join("a"));
        spec.thresholds = vec![0.0, 0.05];
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let sweep_a = threshold_sweep(&spec).unwrap();
        let files_a = emit_reports(&sweep_a, &out_a).unwrap();
        let sweep_b = threshold_sweep(&spec).unwrap();
        let files_b = emit_reports(&sweep_b, &out_b).unwrap();
        assert_eq!(files_a.len(), files_b.len());
        for (a, b) in files_a.iter().zip(&files_b) {
            assert_eq!(
                a.strip_prefix(&out_a).unwrap(),
                b.strip_prefix(&out_b).unwrap()
            );
            let bytes_a = std::fs::read(a).unwrap();
            let bytes_b = std::fs::read(b).unwrap();
            assert_eq!(bytes_a, bytes_b, "mismatch in {}", a.display());
        }
        // Table header is the contract.
        let table = std::fs::read_to_string(out_a.join("table.csv")).unwrap();
        assert!(table.starts_with("T,n_weak,technique,P_mean,P_2sigma,E_mean,E_2sigma\n"));
        assert!(out_a.join("report.json").exists());
        assert!(out_a.join("acceptance.csv").exists());
        assert!(out_a.join("hist_T0.csv").exists());
        assert!(out_a.join("trace_f0_r0.csv").exists());
    }

    #[test]
    fn empty_grid_emits_baseline_only_reports() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = tiny_spec(dir.path());
        spec.thresholds = vec![];
        let sweep = threshold_sweep(&spec).unwrap();
        assert!(sweep.rows.is_empty());
        let out = dir.path().join("out");
        emit_reports(&sweep, &out).unwrap();
        let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2, "header plus the baseline row");
        assert!(lines[1].contains("baseline"));
        let report = std::fs::read_to_string(out.join("report.json")).unwrap();
        assert!(serde_json::from_str::<serde_json::Value>(&report).is_ok());
    }

    #[test]
    fn persisted_baseline_reproduces_report_values() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(dir.path());
        let sweep = threshold_sweep(&spec).unwrap();
        let out = dir.path().join("out");
        emit_reports(&sweep, &out).unwrap();
        let cell = &sweep.cells[0];
        let path = out.join(format!(
            "ensembles/baseline_f{}_r{}.json",
            cell.fold, cell.repeat
        ));
        let ensemble = Ensemble::read_file(&path).unwrap();
        let (p, e) = evaluate(&ensemble, &cell.test, spec.chain.alpha).unwrap();
        assert_eq!(p, cell.accuracy);
        assert_eq!(e, cell.entropy);

        // Same for a persisted refined ensemble against its report row.
        let ti = sweep.spec.thresholds.len() - 1;
        let threshold = sweep.spec.thresholds[ti];
        let row = sweep
            .rows
            .iter()
            .find(|r| r.threshold == threshold && r.technique == "refine")
            .unwrap();
        let cell_eval = &row.per_cell[0];
        if !cell_eval.exhausted {
            let refined_path = out.join(format!(
                "ensembles/refine_T{threshold}_f{}_r{}.json",
                cell.fold, cell.repeat
            ));
            let refined = Ensemble::read_file(&refined_path).unwrap();
            let (p, e) = evaluate(&refined, &cell.test, spec.chain.alpha).unwrap();
            assert_eq!(Some(p), cell_eval.accuracy);
            assert_eq!(Some(e), cell_eval.entropy);
            let record = refined.provenance.refinement.unwrap();
            assert_eq!(record.threshold, threshold);
            assert_eq!(Some(record.retained), cell_eval.retained);
        }
    }
}
