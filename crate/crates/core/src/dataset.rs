//! Tabular classification datasets, synthetic data generation, candidate
//! split-rule catalogs, and stratified fold plans.
//!
//! Class labels are remapped to a dense `1..=C` on load, preserving the
//! sorted order of the original label values; the originals are kept as
//! metadata for reporting and CSV round trips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A feature matrix with dense integer class labels in `1..=C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    m: usize,
    class_count: usize,
    /// Row-major n*m feature matrix.
    features: Vec<f64>,
    /// One label per row, in `1..=class_count`.
    labels: Vec<usize>,
    attribute_names: Vec<String>,
    /// Original label value for each dense class, sorted ascending.
    class_values: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants: labels dense in `1..=C`
    /// with every class present, distinct attribute names, finite features.
    pub fn new(
        features: Vec<f64>,
        m: usize,
        labels: Vec<usize>,
        attribute_names: Vec<String>,
        class_values: Vec<f64>,
    ) -> Result<Self> {
        let class_count = class_values.len();
        if m == 0 {
            return Err(Error::DegenerateData("dataset has no attributes".into()));
        }
        if labels.is_empty() || features.len() != labels.len() * m {
            return Err(Error::DegenerateData(format!(
                "feature matrix has {} cells, expected {} rows x {} attributes",
                features.len(),
                labels.len(),
                m
            )));
        }
        if class_count < 2 {
            return Err(Error::DegenerateData(
                "fewer than two distinct classes".into(),
            ));
        }
        if attribute_names.len() != m {
            return Err(Error::DegenerateData(format!(
                "{} attribute names for {} attributes",
                attribute_names.len(),
                m
            )));
        }
        let mut sorted = attribute_names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != m {
            return Err(Error::DegenerateData(
                "attribute names are not distinct".into(),
            ));
        }
        let mut seen = vec![false; class_count];
        for &label in &labels {
            if label < 1 || label > class_count {
                return Err(Error::DegenerateData(format!(
                    "label {label} outside 1..={class_count}"
                )));
            }
            seen[label - 1] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::DegenerateData(
                "some class in 1..=C has no samples".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite feature value".into()));
        }
        Ok(Dataset {
            n: labels.len(),
            m,
            class_count,
            features,
            labels,
            attribute_names,
            class_values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_attributes(&self) -> usize {
        self.m
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Feature row `i` as a slice of length `m`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.m..(i + 1) * self.m]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.m + j]
    }

    /// Dense class label of row `i`, in `1..=C`.
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    /// Original label values backing each dense class, ascending.
    pub fn class_values(&self) -> &[f64] {
        &self.class_values
    }

    /// SHA-256 of the canonical CSV rendering, as lowercase hex.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(csv_bytes(self));
        hex_string(&hasher.finalize())
    }

    /// New dataset keeping only the rows in `indices` (in the given order).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.m);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            features,
            self.m,
            labels,
            self.attribute_names.clone(),
            self.class_values.clone(),
        )
    }

    /// New dataset keeping only the attribute columns in `keep` (ascending,
    /// deduplicated by the caller). Labels and class metadata are unchanged.
    pub fn project_columns(&self, keep: &[usize]) -> Result<Dataset> {
        if keep.is_empty() {
            return Err(Error::Parameter("no attributes left after projection".into()));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= self.m {
            return Err(Error::Parameter(
                "projection columns must be strictly increasing and in range".into(),
            ));
        }
        let mut features = Vec::with_capacity(self.n * keep.len());
        for i in 0..self.n {
            let row = self.row(i);
            features.extend(keep.iter().map(|&j| row[j]));
        }
        let names = keep.iter().map(|&j| self.attribute_names[j].clone()).collect();
        Dataset::new(
            features,
            keep.len(),
            self.labels.clone(),
            names,
            self.class_values.clone(),
        )
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Renders a finite value so that parsing it back yields the identical f64.
/// 17 significant digits are always sufficient for binary64.
pub(crate) fn render_exact(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders a class value: integers in plain form, anything else exactly.
fn render_class_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        render_exact(v)
    }
}

/// Canonical CSV bytes: header `attr_1,...,attr_m,class`, one row per
/// sample, features in 17-significant-digit scientific form.
pub fn csv_bytes(data: &Dataset) -> Vec<u8> {
    let mut out = String::new();
    for name in data.attribute_names() {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("class\n");
    for i in 0..data.n_samples() {
        for v in data.row(i) {
            out.push_str(&render_exact(*v));
            out.push(',');
        }
        out.push_str(&render_class_value(data.class_values[data.label(i) - 1]));
        out.push('\n');
    }
    out.into_bytes()
}

/// Writes the canonical CSV form of `data` to `path`.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, csv_bytes(data)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a CSV dataset: feature columns named in the header plus a final
/// column named `class`. Labels are remapped to dense `1..=C` in the sorted
/// order of the distinct original values.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::DegenerateData("empty file".into()))?;
    let columns: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if columns.len() < 2 || *columns.last().unwrap() != "class" {
        return Err(Error::Parse {
            row: 1,
            column: columns.last().unwrap_or(&"").to_string(),
            message: "header must name at least one attribute and end with `class`".into(),
        });
    }
    let m = columns.len() - 1;
    let attribute_names: Vec<String> = columns[..m].iter().map(|s| s.to_string()).collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (line_idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = line_idx + 1; // 1-based, including the header line
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != m + 1 {
            return Err(Error::Parse {
                row,
                column: "class".into(),
                message: format!("expected {} cells, found {}", m + 1, cells.len()),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            let column = columns[j].to_string();
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: column.clone(),
                message: format!("cannot parse `{cell}` as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            if j < m {
                features.push(value);
            } else {
                raw_labels.push(value);
            }
        }
    }
    if raw_labels.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 data rows, found {}",
            raw_labels.len()
        )));
    }

    let mut class_values: Vec<f64> = raw_labels.clone();
    class_values.sort_by(f64::total_cmp);
    class_values.dedup();
    if class_values.len() < 2 {
        return Err(Error::DegenerateData(
            "all rows carry the same class label".into(),
        ));
    }
    let labels = raw_labels
        .iter()
        .map(|v| class_values.binary_search_by(|c| c.total_cmp(v)).unwrap() + 1)
        .collect();
    Dataset::new(features, m, labels, attribute_names, class_values)
}

/// Generates a balanced synthetic dataset. The first `informative`
/// attributes are unit-variance Gaussians centered at `effect * class`;
/// the rest are class-independent standard Gaussian noise.
pub fn generate_synthetic(
    n: usize,
    m: usize,
    classes: usize,
    informative: usize,
    effect: f64,
    seed: u64,
) -> Result<Dataset> {
    if informative < 1 || informative > m {
        return Err(Error::Parameter(format!(
            "informative must lie in 1..={m}, got {informative}"
        )));
    }
    if classes < 2 {
        return Err(Error::Parameter("need at least 2 classes".into()));
    }
    if n < classes {
        return Err(Error::Parameter(format!(
            "need at least one sample per class: n={n} < classes={classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Balanced label multiset: the first n mod C classes get the extra sample.
    let mut labels = Vec::with_capacity(n);
    for class in 1..=classes {
        let count = n / classes + usize::from(class <= n % classes);
        labels.extend(std::iter::repeat_n(class, count));
    }
    labels.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n * m);
    for &label in &labels {
        for j in 0..m {
            let noise: f64 = rng.sample(StandardNormal);
            let mean = if j < informative {
                effect * label as f64
            } else {
                0.0
            };
            features.push(mean + noise);
        }
    }
    let attribute_names = (1..=m).map(|j| format!("attr_{j}")).collect();
    let class_values = (1..=classes).map(|c| c as f64).collect();
    Dataset::new(features, m, labels, attribute_names, class_values)
}

/// Per-attribute candidate split thresholds, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleCatalog {
    thresholds: Vec<Vec<f64>>,
    splittable: Vec<usize>,
}

impl RuleCatalog {
    pub fn n_attributes(&self) -> usize {
        self.thresholds.len()
    }

    /// Candidate thresholds for attribute `j` (empty when `j` is constant).
    pub fn candidates(&self, j: usize) -> &[f64] {
        &self.thresholds[j]
    }

    pub fn rule_count(&self, j: usize) -> usize {
        self.thresholds[j].len()
    }

    /// Attributes with at least one candidate rule, ascending.
    pub fn splittable_attributes(&self) -> &[usize] {
        &self.splittable
    }
}

/// Builds the candidate-rule catalog: midpoints between consecutive distinct
/// observed values of each attribute, so every adjacent pair is separated.
pub fn build_rule_catalog(data: &Dataset) -> RuleCatalog {
    let m = data.n_attributes();
    let mut thresholds = Vec::with_capacity(m);
    let mut column = Vec::with_capacity(data.n_samples());
    for j in 0..m {
        column.clear();
        column.extend((0..data.n_samples()).map(|i| data.value(i, j)));
        column.sort_by(f64::total_cmp);
        column.dedup();
        let mut candidates = Vec::with_capacity(column.len().saturating_sub(1));
        for w in column.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = a + (b - a) / 2.0;
            // Guard against rounding onto the upper value, which would stop
            // `x <= rule` from separating the pair.
            candidates.push(if mid < b { mid } else { a });
        }
        thresholds.push(candidates);
    }
    let splittable = (0..m).filter(|&j| !thresholds[j].is_empty()).collect();
    RuleCatalog {
        thresholds,
        splittable,
    }
}

/// A stratified assignment of samples to `k` folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    k_folds: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn k_folds(&self) -> usize {
        self.k_folds
    }

    /// Fold index (0-based) of each sample.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_size(&self, fold: usize) -> usize {
        self.assignment.iter().filter(|&&f| f == fold).count()
    }

    /// Splits `data` into (train, test) where test is the given fold.
    pub fn split(&self, data: &Dataset, fold: usize) -> Result<(Dataset, Dataset)> {
        if fold >= self.k_folds {
            return Err(Error::Parameter(format!(
                "fold {fold} out of range 0..{}",
                self.k_folds
            )));
        }
        let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
        for (i, &f) in self.assignment.iter().enumerate() {
            if f == fold {
                test_idx.push(i);
            } else {
                train_idx.push(i);
            }
        }
        Ok((data.select_rows(&train_idx)?, data.select_rows(&test_idx)?))
    }
}

/// Deterministic stratified fold assignment: per-class counts per fold and
/// total fold sizes both differ by at most one.
pub fn make_folds(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("k_folds must be >= 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..data.n_samples() {
        by_class.entry(data.label(i)).or_default().push(i);
    }
    for (&class, members) in &by_class {
        if members.len() < k {
            return Err(Error::Stratification {
                class,
                count: members.len(),
                k_folds: k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; data.n_samples()];
    // Rotating the dealing offset across classes keeps total fold sizes
    // within one of each other, not just the per-class counts.
    let mut offset = 0usize;
    for members in by_class.values() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = (offset + pos) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPlan {
        k_folds: k,
        assignment,
    })
}
