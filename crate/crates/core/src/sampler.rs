//! Reversible-jump MCMC over decision trees: Birth / Death / Change-split /
//! Change-rule proposals, Metropolis-Hastings acceptance, burn-in and
//! thinned post-burn-in collection, diagnostics, and the ensemble file
//! format.
//!
//! The tree prior is the product of the uniform draws that generate each
//! split (attribute uniform over the splittable attributes, rule uniform
//! over that attribute's candidates). Birth's proposal density cancels it
//! exactly, so the acceptance ratio keeps only the likelihood ratio, the
//! move-probability ratio, and the `k_T / D'` dimension-matching term;
//! Change-split and Change-rule reduce to the likelihood ratio alone.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, RuleCatalog};
use crate::error::{Error, Result};
use crate::likelihood::LogLikTables;
use crate::tree::DecisionTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Birth,
    Death,
    ChangeSplit,
    ChangeRule,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::ChangeSplit,
        MoveKind::ChangeRule,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::ChangeSplit => "change_split",
            MoveKind::ChangeRule => "change_rule",
        }
    }
}

/// Sampler hyperparameters. Defaults: 200k burn-in iterations, 10k
/// retained models at thinning 7, minimum node size 6, move
/// probabilities (0.15, 0.15, 0.1, 0.6), unit proposal variance for the
/// rule-index random walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: u64,
    /// Number of retained models (one per `thinning` post-burn-in iterations).
    pub post_burn_in: u64,
    pub thinning: u64,
    pub min_node_size: usize,
    /// (birth, death, change_split, change_rule); must sum to one.
    pub move_probs: [f64; 4],
    /// Variance of the Gaussian offset applied to a rule's catalog index in
    /// Change-rule moves.
    pub proposal_variance: f64,
    /// Dirichlet concentration shared by the likelihood and prediction.
    pub alpha: f64,
    pub seed: u64,
    /// Record (iteration, split count) every this many iterations.
    pub trace_stride: u64,
    /// Test-only clamp on the split budget; `None` derives `s_max = n - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_splits: Option<usize>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 200_000,
            post_burn_in: 10_000,
            thinning: 7,
            min_node_size: 6,
            move_probs: [0.15, 0.15, 0.1, 0.6],
            proposal_variance: 1.0,
            alpha: 1.0,
            seed: 0,
            trace_stride: 100,
            max_splits: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.post_burn_in == 0 {
            return Err(Error::Config("post_burn_in must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::Config("min_node_size must be at least 1".into()));
        }
        if self.trace_stride == 0 {
            return Err(Error::Config("trace_stride must be at least 1".into()));
        }
        if self.proposal_variance.is_nan() || self.proposal_variance <= 0.0 {
            return Err(Error::Config("proposal_variance must be positive".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.move_probs.iter().any(|&p| p.is_nan() || p <= 0.0) {
            return Err(Error::Config("move probabilities must be positive".into()));
        }
        let sum: f64 = self.move_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "move probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Canonical flat key-value rendering, used for digests and config echo.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "burn_in = {}", self.burn_in);
        let _ = writeln!(s, "min_node_size = {}", self.min_node_size);
        let _ = writeln!(
            s,
            "move_probs = {},{},{},{}",
            self.move_probs[0], self.move_probs[1], self.move_probs[2], self.move_probs[3]
        );
        if let Some(max) = self.max_splits {
            let _ = writeln!(s, "max_splits = {max}");
        }
        let _ = writeln!(s, "post_burn_in = {}", self.post_burn_in);
        let _ = writeln!(s, "proposal_variance = {}", self.proposal_variance);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "thinning = {}", self.thinning);
        let _ = writeln!(s, "trace_stride = {}", self.trace_stride);
        s
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        let mut out = String::new();
        for b in hasher.finalize() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Per-move proposal/acceptance counters plus the tree-size trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub proposals: [u64; 4],
    pub acceptances: [u64; 4],
    pub iterations: u64,
    pub burn_in: u64,
    /// (iteration, splitting-node count) sampled every `trace_stride`.
    pub size_trace: Vec<(u64, usize)>,
}

impl Diagnostics {
    pub fn overall_acceptance(&self) -> f64 {
        let proposed: u64 = self.proposals.iter().sum();
        if proposed == 0 {
            return 0.0;
        }
        self.acceptances.iter().sum::<u64>() as f64 / proposed as f64
    }

    pub fn move_acceptance(&self, kind: MoveKind) -> f64 {
        let i = kind as usize;
        if self.proposals[i] == 0 {
            return 0.0;
        }
        self.acceptances[i] as f64 / self.proposals[i] as f64
    }
}

/// Tree-size stationarity check comparing the tail of burn-in against the
/// post-burn-in phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaritySummary {
    pub mean_size_last_burn_in_quartile: f64,
    pub mean_size_post_burn_in: f64,
    pub drift_ratio: f64,
}

/// `drift = |mean_post - mean_last_quartile| / max(1, mean_last_quartile)`
/// where the reference window is the last quarter of the burn-in trace.
pub fn stationarity_summary(diag: &Diagnostics) -> Result<StationaritySummary> {
    if diag.size_trace.is_empty() {
        return Err(Error::Diagnostics("empty tree-size trace".into()));
    }
    let burn: Vec<f64> = diag
        .size_trace
        .iter()
        .filter(|(it, _)| *it <= diag.burn_in)
        .map(|(_, s)| *s as f64)
        .collect();
    let post: Vec<f64> = diag
        .size_trace
        .iter()
        .filter(|(it, _)| *it > diag.burn_in)
        .map(|(_, s)| *s as f64)
        .collect();
    if post.is_empty() {
        return Err(Error::Diagnostics("no post-burn-in trace entries".into()));
    }
    let reference = if burn.is_empty() {
        post[0]
    } else {
        let q = (burn.len() / 4).max(1);
        let tail = &burn[burn.len() - q..];
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let mean_post = post.iter().sum::<f64>() / post.len() as f64;
    Ok(StationaritySummary {
        mean_size_last_burn_in_quartile: reference,
        mean_size_post_burn_in: mean_post,
        drift_ratio: (mean_post - reference).abs() / reference.max(1.0),
    })
}

/// Where an ensemble came from: digests of its inputs, the fold/repeat it
/// belongs to, attribute metadata for self-description, and optional
/// refinement / column-projection records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub dataset_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<u32>,
    pub class_count: usize,
    pub attribute_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementRecord>,
    /// For ensembles sampled on a column-projected dataset: the names of the
    /// surviving original attributes, in projected order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_attributes: Option<Vec<String>>,
}

/// Refinement provenance block: threshold, weak set, survivor counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub threshold: f64,
    pub n_weak: usize,
    pub weak_attributes: Vec<String>,
    pub retained: usize,
    pub total: usize,
}

/// A thinned post-burn-in tree collection with per-tree log likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trees: Vec<DecisionTree>,
    pub log_liks: Vec<f64>,
    pub config: ChainConfig,
    pub provenance: Provenance,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = EnsembleFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            provenance: self.provenance.clone(),
            config: self.config.clone(),
            tree_count: self.trees.len(),
            trees: self.trees.iter().map(|t| t.to_text()).collect(),
            log_liks: self.log_liks.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::EnsembleFormat(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_file(path: &Path) -> Result<Ensemble> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: EnsembleFile =
            serde_json::from_str(&text).map_err(|e| Error::EnsembleFormat(e.to_string()))?;
        if file.format != FORMAT_NAME {
            return Err(Error::EnsembleFormat(format!(
                "unknown format `{}`",
                file.format
            )));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::EnsembleFormat(format!(
                "unsupported version {}",
                file.version
            )));
        }
        if file.trees.len() != file.log_liks.len() || file.trees.len() != file.tree_count {
            return Err(Error::EnsembleFormat(format!(
                "inconsistent lengths: {} trees, {} log_liks, tree_count {}",
                file.trees.len(),
                file.log_liks.len(),
                file.tree_count
            )));
        }
        let trees = file
            .trees
            .iter()
            .map(|t| DecisionTree::from_text(t, file.provenance.class_count))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            trees,
            log_liks: file.log_liks,
            config: file.config,
            provenance: file.provenance,
        })
    }
}

const FORMAT_NAME: &str = "treebma-ensemble";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    format: String,
    version: u32,
    provenance: Provenance,
    config: ChainConfig,
    tree_count: usize,
    trees: Vec<String>,
    log_liks: Vec<f64>,
}

/// Log move-probability ratio for a Birth from a tree with `terminals_current`
/// terminals to a candidate with `pruneable_candidate` pruneable splits.
pub fn birth_log_move_ratio(
    move_probs: &[f64; 4],
    terminals_current: usize,
    pruneable_candidate: usize,
) -> f64 {
    (move_probs[MoveKind::Death as usize] / move_probs[MoveKind::Birth as usize]).ln()
        + (terminals_current as f64 / pruneable_candidate as f64).ln()
}

/// Log move-probability ratio for a Death: the reciprocal of the matching
/// Birth's term.
pub fn death_log_move_ratio(
    move_probs: &[f64; 4],
    pruneable_current: usize,
    terminals_candidate: usize,
) -> f64 {
    (move_probs[MoveKind::Birth as usize] / move_probs[MoveKind::Death as usize]).ln()
        + (pruneable_current as f64 / terminals_candidate as f64).ln()
}

/// Metropolis-Hastings acceptance with probability
/// `min(1, exp(candidate - current + log_move_ratio))`.
pub fn accept<R: Rng>(
    current_log_lik: f64,
    candidate_log_lik: f64,
    log_move_ratio: f64,
    rng: &mut R,
) -> bool {
    let delta = candidate_log_lik - current_log_lik + log_move_ratio;
    delta >= 0.0 || rng.gen::<f64>() < delta.exp()
}

/// A recounted, valid candidate with its score and proposal-ratio term.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub tree: DecisionTree,
    pub log_lik: f64,
    pub log_move_ratio: f64,
}

/// One live Markov chain over trees. Strictly sequential; independent
/// chains (different folds or seeds) can run concurrently.
pub struct Chain<'a> {
    data: &'a Dataset,
    catalog: &'a RuleCatalog,
    config: ChainConfig,
    tables: LogLikTables,
    s_max: usize,
    rng: ChaCha8Rng,
    current: DecisionTree,
    current_log_lik: f64,
    iteration: u64,
    proposals: [u64; 4],
    acceptances: [u64; 4],
    size_trace: Vec<(u64, usize)>,
}

impl<'a> Chain<'a> {
    /// Validates the config and data, then draws the initial tree: one
    /// uniformly drawn valid split, retried up to `s_max` times.
    pub fn new(data: &'a Dataset, catalog: &'a RuleCatalog, config: ChainConfig) -> Result<Self> {
        config.validate()?;
        if data.n_samples() < 2 * config.min_node_size {
            return Err(Error::ChainInit(format!(
                "need n >= 2 * min_node_size, got n={} with min_node_size={}",
                data.n_samples(),
                config.min_node_size
            )));
        }
        if catalog.splittable_attributes().is_empty() {
            return Err(Error::ChainInit(
                "no attribute has a candidate splitting rule".into(),
            ));
        }
        let s_max = (data.n_samples() - 1).min(config.max_splits.unwrap_or(usize::MAX));
        let tables = LogLikTables::new(data.class_count(), data.n_samples(), config.alpha);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut initial = None;
        for _ in 0..s_max.max(1) {
            let (attribute, rule) = draw_split_params(catalog, &mut rng);
            let stump = DecisionTree::stump(attribute, rule, data.class_count());
            let (stump, valid) = stump.recount(data, config.min_node_size);
            if valid {
                initial = Some(stump);
                break;
            }
        }
        let current = initial.ok_or_else(|| {
            Error::ChainInit(format!(
                "no valid initial split found after {s_max} attempts"
            ))
        })?;
        let current_log_lik = tables.log_marginal(&current)?;
        Ok(Chain {
            data,
            catalog,
            config,
            tables,
            s_max,
            rng,
            current,
            current_log_lik,
            iteration: 0,
            proposals: [0; 4],
            acceptances: [0; 4],
            size_trace: Vec::new(),
        })
    }

    pub fn current(&self) -> &DecisionTree {
        &self.current
    }

    pub fn current_log_lik(&self) -> f64 {
        self.current_log_lik
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            proposals: self.proposals,
            acceptances: self.acceptances,
            iterations: self.iteration,
            burn_in: self.config.burn_in,
            size_trace: self.size_trace.clone(),
        }
    }

    fn draw_move_kind(&mut self) -> MoveKind {
        let u: f64 = self.rng.gen();
        let p = &self.config.move_probs;
        if u < p[0] {
            MoveKind::Birth
        } else if u < p[0] + p[1] {
            MoveKind::Death
        } else if u < p[0] + p[1] + p[2] {
            MoveKind::ChangeSplit
        } else {
            MoveKind::ChangeRule
        }
    }

    /// One Metropolis-Hastings iteration. Inapplicable or invalid proposals
    /// count as rejected; the chain stays where it is.
    pub fn step(&mut self) {
        self.iteration += 1;
        let kind = self.draw_move_kind();
        self.proposals[kind as usize] += 1;
        if let Some(proposal) = self.propose(kind) {
            if accept(
                self.current_log_lik,
                proposal.log_lik,
                proposal.log_move_ratio,
                &mut self.rng,
            ) {
                self.current = proposal.tree;
                self.current_log_lik = proposal.log_lik;
                self.acceptances[kind as usize] += 1;
            }
        }
        if self.iteration.is_multiple_of(self.config.trace_stride) {
            self.size_trace
                .push((self.iteration, self.current.split_count()));
        }
    }

    /// Draws a candidate for the given move. `None` means the move was
    /// inapplicable or produced an invalid tree; the caller records a
    /// rejection either way.
    pub fn propose(&mut self, kind: MoveKind) -> Option<Proposal> {
        match kind {
            MoveKind::Birth => self.propose_birth(),
            MoveKind::Death => self.propose_death(),
            MoveKind::ChangeSplit => self.propose_change_split(),
            MoveKind::ChangeRule => self.propose_change_rule(),
        }
    }

    fn finish_candidate(&self, candidate: DecisionTree) -> Option<(DecisionTree, f64)> {
        let (candidate, valid) = candidate.recount(self.data, self.config.min_node_size);
        if !valid {
            return None;
        }
        let log_lik = self
            .tables
            .log_marginal(&candidate)
            .expect("candidate was just recounted");
        Some((candidate, log_lik))
    }

    fn propose_birth(&mut self) -> Option<Proposal> {
        if self.current.split_count() + 1 > self.s_max {
            return None;
        }
        let terminals = self.current.terminal_indices();
        let k_t = terminals.len();
        let target = terminals[self.rng.gen_range(0..k_t)];
        let (attribute, rule) = draw_split_params(self.catalog, &mut self.rng);
        let candidate = self
            .current
            .split_terminal(target, attribute, rule)
            .expect("terminal index from terminal_indices");
        let (candidate, log_lik) = self.finish_candidate(candidate)?;
        let d_prime = candidate.pruneable_splits().len();
        let log_move_ratio = birth_log_move_ratio(&self.config.move_probs, k_t, d_prime);
        Some(Proposal {
            tree: candidate,
            log_lik,
            log_move_ratio,
        })
    }

    fn propose_death(&mut self) -> Option<Proposal> {
        let pruneable = self.current.pruneable_splits();
        if pruneable.is_empty() {
            return None;
        }
        let d = pruneable.len();
        let target = pruneable[self.rng.gen_range(0..d)];
        let candidate = self
            .current
            .prune_split(target)
            .expect("index from pruneable_splits");
        let (candidate, log_lik) = self.finish_candidate(candidate)?;
        let k_prime = candidate.terminal_count();
        let log_move_ratio = death_log_move_ratio(&self.config.move_probs, d, k_prime);
        Some(Proposal {
            tree: candidate,
            log_lik,
            log_move_ratio,
        })
    }

    fn propose_change_split(&mut self) -> Option<Proposal> {
        let splits = self.current.split_indices();
        if splits.is_empty() {
            return None;
        }
        let target = splits[self.rng.gen_range(0..splits.len())];
        let (attribute, rule) = draw_split_params(self.catalog, &mut self.rng);
        let candidate = self
            .current
            .set_split(target, attribute, rule)
            .expect("index from split_indices");
        let (candidate, log_lik) = self.finish_candidate(candidate)?;
        Some(Proposal {
            tree: candidate,
            log_lik,
            log_move_ratio: 0.0,
        })
    }

    fn propose_change_rule(&mut self) -> Option<Proposal> {
        let splits = self.current.split_indices();
        if splits.is_empty() {
            return None;
        }
        let target = splits[self.rng.gen_range(0..splits.len())];
        let (attribute, rule) = match *self.current.node(target) {
            crate::tree::Node::Split {
                attribute, rule, ..
            } => (attribute, rule),
            crate::tree::Node::Terminal { .. } => unreachable!(),
        };
        let rules = self.catalog.candidates(attribute);
        let index = rules
            .binary_search_by(|r| r.total_cmp(&rule))
            .expect("current rule must come from the catalog");
        let normal = Normal::new(0.0, self.config.proposal_variance.sqrt())
            .expect("validated positive variance");
        let offset = normal.sample(&mut self.rng).round() as i64;
        if offset == 0 {
            return None;
        }
        let new_index = index as i64 + offset;
        if new_index < 0 || new_index >= rules.len() as i64 {
            return None;
        }
        let candidate = self
            .current
            .set_split(target, attribute, rules[new_index as usize])
            .expect("index from split_indices");
        let (candidate, log_lik) = self.finish_candidate(candidate)?;
        Some(Proposal {
            tree: candidate,
            log_lik,
            log_move_ratio: 0.0,
        })
    }
}

fn draw_split_params(catalog: &RuleCatalog, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let attrs = catalog.splittable_attributes();
    let attribute = attrs[rng.gen_range(0..attrs.len())];
    let rules = catalog.candidates(attribute);
    let rule = rules[rng.gen_range(0..rules.len())];
    (attribute, rule)
}

/// Runs a full chain: `burn_in` discarded iterations, then
/// `post_burn_in * thinning` iterations retaining every `thinning`-th
/// state. Deterministic given the seed.
pub fn run_chain(
    data: &Dataset,
    catalog: &RuleCatalog,
    config: &ChainConfig,
) -> Result<(Ensemble, Diagnostics)> {
    let mut chain = Chain::new(data, catalog, config.clone())?;
    for _ in 0..config.burn_in {
        chain.step();
    }
    let mut trees = Vec::with_capacity(config.post_burn_in as usize);
    let mut log_liks = Vec::with_capacity(config.post_burn_in as usize);
    for i in 1..=config.post_burn_in * config.thinning {
        chain.step();
        if i.is_multiple_of(config.thinning) {
            trees.push(chain.current().clone());
            log_liks.push(chain.current_log_lik());
        }
    }
    let diagnostics = chain.diagnostics();
    let ensemble = Ensemble {
        trees,
        log_liks,
        config: config.clone(),
        provenance: Provenance {
            config_digest: config.digest(),
            dataset_digest: data.digest(),
            fold_id: None,
            repeat: None,
            class_count: data.class_count(),
            attribute_names: data.attribute_names().to_vec(),
            refinement: None,
            kept_attributes: None,
        },
    };
    Ok((ensemble, diagnostics))
}
