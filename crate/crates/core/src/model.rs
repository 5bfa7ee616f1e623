//! Weighted random forest with Gini splits, plus balanced-accuracy threshold tuning.
//!
//! Features are built from a [`Table`] by keeping numeric columns as-is and
//! expanding every categorical column (the protected attribute included) into
//! one indicator per level. The label column is never a feature.
//!
//! Training is deterministic for a fixed `(config, data, weights)`:
//!
//! - rows are put in a canonical order (lexicographic on features, then label,
//!   then weight) before any sampling, so the input row order is irrelevant;
//! - tree `i` draws from its own stream seeded with `derive_seed(seed, i)`, so
//!   parallel and serial training agree;
//! - with bootstrapping, each tree draws `n` rows with replacement with
//!   probability proportional to the instance weight, and the Gini criterion
//!   then weighs each drawn row by its multiplicity. Without bootstrapping the
//!   Gini criterion uses the instance weights directly.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnData, ColumnKind, Table};
use crate::rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    Empty,
    #[error("training data has a single label class")]
    SingleClass,
    #[error("instance weights sum to zero")]
    ZeroWeight,
    #[error("instance weight {0} at row {1} is negative or not finite")]
    BadWeight(f64, usize),
    #[error("{what}: expected {expected} values, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("forest needs at least one tree")]
    NoTrees,
    #[error("min_leaf must be at least 1")]
    BadMinLeaf,
    #[error("max_features {requested} exceeds the {available} available features")]
    TooManyFeatures { requested: usize, available: usize },
    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{0} label class absent, balanced accuracy undefined")]
    MissingClass(&'static str),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// A source column as seen by the feature encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceColumn {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<SourceColumn>,
}

impl FeatureSchema {
    pub fn of(t: &Table) -> Self {
        let columns = t
            .columns()
            .iter()
            .filter(|c| c.name != t.label_column())
            .map(|c| SourceColumn {
                name: c.name.clone(),
                kind: c.kind(),
                levels: c.levels().map(<[String]>::to_vec).unwrap_or_default(),
            })
            .collect();
        FeatureSchema { columns }
    }

    pub fn n_features(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numeric => 1,
                ColumnKind::Categorical => c.levels.len(),
            })
            .sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_features());
        for c in &self.columns {
            match c.kind {
                ColumnKind::Numeric => out.push(c.name.clone()),
                ColumnKind::Categorical => out.extend(c.levels.iter().map(|l| format!("{}={l}", c.name))),
            }
        }
        out
    }

    fn describe_mismatch(&self, other: &FeatureSchema) -> String {
        for (a, b) in self.columns.iter().zip(&other.columns) {
            if a != b {
                return format!("column `{}` differs from trained `{}`", b.name, a.name);
            }
        }
        format!(
            "trained on {} columns, given {}",
            self.columns.len(),
            other.columns.len()
        )
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    schema: FeatureSchema,
    n_rows: usize,
    n_features: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_table(t: &Table) -> Self {
        let schema = FeatureSchema::of(t);
        let n_rows = t.n_rows();
        let n_features = schema.n_features();
        let mut values = vec![0.0; n_rows * n_features];
        let mut offset = 0;
        for c in t.columns().iter().filter(|c| c.name != t.label_column()) {
            match &c.data {
                ColumnData::Numeric(v) => {
                    for (r, &x) in v.iter().enumerate() {
                        values[r * n_features + offset] = x;
                    }
                    offset += 1;
                }
                ColumnData::Categorical { levels, codes } => {
                    for (r, &code) in codes.iter().enumerate() {
                        values[r * n_features + offset + code as usize] = 1.0;
                    }
                    offset += levels.len();
                }
            }
        }
        FeatureMatrix {
            schema,
            n_rows,
            n_features,
            values,
        }
    }

    /// Matrix over raw numeric rows, for callers that do not start from a table.
    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Self {
        let n_features = names.len();
        let schema = FeatureSchema {
            columns: names
                .iter()
                .map(|n| SourceColumn {
                    name: n.to_string(),
                    kind: ColumnKind::Numeric,
                    levels: vec![],
                })
                .collect(),
        };
        let mut values = Vec::with_capacity(rows.len() * n_features);
        for r in rows {
            assert_eq!(r.len(), n_features, "ragged feature rows");
            values.extend_from_slice(r);
        }
        FeatureMatrix {
            schema,
            n_rows: rows.len(),
            n_features,
            values,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    fn get(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features + feature]
    }

    pub fn take_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            schema: self.schema.clone(),
            n_rows: rows.len(),
            n_features: self.n_features,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureRule {
    /// `max(1, floor(sqrt(d)))`
    #[serde(alias = "auto")]
    Sqrt,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaxFeatures {
    Count(usize),
    Rule(FeatureRule),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> Result<usize> {
        match self {
            MaxFeatures::Count(k) if k > d => Err(ModelError::TooManyFeatures {
                requested: k,
                available: d,
            }),
            MaxFeatures::Count(k) => Ok(k.max(1)),
            MaxFeatures::Rule(FeatureRule::Sqrt) => Ok(((d as f64).sqrt().floor() as usize).max(1)),
            MaxFeatures::Rule(FeatureRule::All) => Ok(d.max(1)),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_min_leaf() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hit `min_leaf`.
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

impl ForestConfig {
    /// 100 trees, 10 features per split, unlimited depth.
    pub fn cardio() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Count(10),
            min_leaf: 1,
            seed: 0,
            bootstrap: true,
        }
    }

    /// 20 trees of depth 5 with sqrt feature sampling.
    pub fn mimic() -> Self {
        ForestConfig {
            n_trees: 20,
            max_depth: Some(5),
            max_features: MaxFeatures::Rule(FeatureRule::Sqrt),
            min_leaf: 1,
            seed: 0,
            bootstrap: true,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ForestConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Weighted fraction of positive rows reaching the leaf; the negative-class
    /// probability is `1 - positive`.
    Leaf { positive: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { positive } => return positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, id: usize) -> usize {
            match t.nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    pub format_version: u32,
    pub config: ForestConfig,
    pub schema: FeatureSchema,
    pub trees: Vec<Tree>,
}

/// Anything producing positive-class scores in `[0, 1]`.
pub trait Scorer {
    fn score(&self, x: &FeatureMatrix) -> Result<Vec<f64>>;
}

/// A learner that accepts per-row instance weights.
pub trait WeightedTrainer: Sync {
    type Model: Scorer + Send;

    fn train(&self, x: &FeatureMatrix, labels: &[u8], weights: Option<&[f64]>) -> Result<Self::Model>;
}

impl WeightedTrainer for ForestConfig {
    type Model = TrainedForest;

    fn train(&self, x: &FeatureMatrix, labels: &[u8], weights: Option<&[f64]>) -> Result<TrainedForest> {
        TrainedForest::fit(self, x, labels, weights)
    }
}

impl Scorer for TrainedForest {
    fn score(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_matrix(x)
    }
}

/// Trains a forest on a table's features and label column.
pub fn train_forest(config: &ForestConfig, train: &Table, weights: Option<&[f64]>) -> Result<TrainedForest> {
    let x = FeatureMatrix::from_table(train);
    TrainedForest::fit(config, &x, &train.labels(), weights)
}

/// Mean over trees of the leaf positive fraction, one score per row.
pub fn predict_scores(model: &TrainedForest, rows: &Table) -> Result<Vec<f64>> {
    model.predict_matrix(&FeatureMatrix::from_table(rows))
}

fn cmp_rows(x: &FeatureMatrix, a: usize, b: usize) -> Ordering {
    x.row(a)
        .iter()
        .zip(x.row(b))
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

impl TrainedForest {
    pub fn fit(
        config: &ForestConfig,
        x: &FeatureMatrix,
        labels: &[u8],
        weights: Option<&[f64]>,
    ) -> Result<Self> {
        let n = x.n_rows();
        if config.n_trees == 0 {
            return Err(ModelError::NoTrees);
        }
        if config.min_leaf == 0 {
            return Err(ModelError::BadMinLeaf);
        }
        if n == 0 {
            return Err(ModelError::Empty);
        }
        if labels.len() != n {
            return Err(ModelError::LengthMismatch {
                what: "labels",
                expected: n,
                found: labels.len(),
            });
        }
        let unit;
        let w = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(ModelError::LengthMismatch {
                        what: "weights",
                        expected: n,
                        found: w.len(),
                    });
                }
                if let Some(i) = w.iter().position(|&v| !(v.is_finite() && v >= 0.0)) {
                    return Err(ModelError::BadWeight(w[i], i));
                }
                w
            }
            None => {
                unit = vec![1.0; n];
                &unit
            }
        };
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(ModelError::ZeroWeight);
        }
        let has = |class: u8| (0..n).any(|i| labels[i] == class && w[i] > 0.0);
        if !has(0) || !has(1) {
            return Err(ModelError::SingleClass);
        }
        let mtry = config.max_features.resolve(x.n_features())?;

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            cmp_rows(x, a, b)
                .then(labels[a].cmp(&labels[b]))
                .then(w[a].total_cmp(&w[b]))
        });
        // Cumulative weights over the canonical order, for proportional draws.
        let total: f64 = order.iter().map(|&i| w[i]).sum();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &i in &order {
            acc += w[i] / total;
            cumulative.push(acc);
        }

        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(rng::derive_seed(config.seed, t as u64));
                let samples: Vec<(u32, f64)> = if config.bootstrap {
                    let mut counts = vec![0u32; n];
                    for _ in 0..n {
                        let u = rng::unit(&mut rng) * acc;
                        let k = cumulative.partition_point(|&c| c <= u).min(n - 1);
                        counts[k] += 1;
                    }
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(k, &c)| (order[k] as u32, c as f64))
                        .collect()
                } else {
                    order
                        .iter()
                        .filter(|&&i| w[i] > 0.0)
                        .map(|&i| (i as u32, w[i]))
                        .collect()
                };
                TreeBuilder {
                    x,
                    labels,
                    config,
                    mtry,
                    rng,
                    nodes: Vec::new(),
                }
                .build(samples)
            })
            .collect();

        Ok(TrainedForest {
            format_version: FOREST_FORMAT_VERSION,
            config: config.clone(),
            schema: x.schema().clone(),
            trees,
        })
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.schema() != &self.schema {
            return Err(ModelError::SchemaMismatch(self.schema.describe_mismatch(x.schema())));
        }
        let k = self.trees.len() as f64;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|r| {
                let row = x.row(r);
                self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TrainedForest = serde_json::from_str(s)?;
        if f.format_version != FOREST_FORMAT_VERSION {
            return Err(ModelError::FormatVersion(f.format_version));
        }
        Ok(f)
    }
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    labels: &'a [u8],
    config: &'a ForestConfig,
    mtry: usize,
    rng: rng::Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build(mut self, mut samples: Vec<(u32, f64)>) -> Tree {
        let len = samples.len();
        self.grow(&mut samples[..len], 0);
        Tree { nodes: self.nodes }
    }

    fn grow(&mut self, samples: &mut [(u32, f64)], depth: usize) -> usize {
        let (w0, w1) = samples.iter().fold((0.0, 0.0), |(a, b), &(i, w)| {
            if self.labels[i as usize] == 1 {
                (a, b + w)
            } else {
                (a + w, b)
            }
        });
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive: w1 / (w0 + w1),
        });
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if w0 == 0.0 || w1 == 0.0 || depth_capped || samples.len() < 2 * self.config.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(samples) else {
            return id;
        };
        let x = self.x;
        let mut boundary = 0;
        for k in 0..samples.len() {
            if x.get(samples[k].0 as usize, best.feature) <= best.threshold {
                samples.swap(k, boundary);
                boundary += 1;
            }
        }
        let (left_s, right_s) = samples.split_at_mut(boundary);
        let left = self.grow(left_s, depth + 1);
        let right = self.grow(right_s, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Candidate features are visited in a random order; the search stops after
    /// `mtry` of them once at least one valid split has been seen.
    fn best_split(&mut self, samples: &[(u32, f64)]) -> Option<BestSplit> {
        let d = self.x.n_features();
        let mut features: Vec<usize> = (0..d).collect();
        rng::shuffle(&mut self.rng, &mut features);
        let min_leaf = self.config.min_leaf;
        let mut best: Option<BestSplit> = None;
        let mut column: Vec<(f64, u8, f64)> = Vec::with_capacity(samples.len());
        for (visited, &f) in features.iter().enumerate() {
            if visited >= self.mtry && best.is_some() {
                break;
            }
            column.clear();
            column.extend(
                samples
                    .iter()
                    .map(|&(i, w)| (self.x.get(i as usize, f), self.labels[i as usize], w)),
            );
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (t0, t1) = column.iter().fold((0.0, 0.0), |(a, b), &(_, y, w)| {
                if y == 1 {
                    (a, b + w)
                } else {
                    (a + w, b)
                }
            });
            let (mut l0, mut l1) = (0.0, 0.0);
            let m = column.len();
            for k in 0..m - 1 {
                let (v, y, w) = column[k];
                if y == 1 {
                    l1 += w;
                } else {
                    l0 += w;
                }
                let next = column[k + 1].0;
                if v >= next || k + 1 < min_leaf || m - k - 1 < min_leaf {
                    continue;
                }
                let (r0, r1) = (t0 - l0, t1 - l1);
                let (lw, rw) = (l0 + l1, r0 + r1);
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                // Minimising weighted child Gini == maximising this sum.
                let score = (l0 * l0 + l1 * l1) / lw + (r0 * r0 + r1 * r1) / rw;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mid = v + (next - v) / 2.0;
                    let threshold = if mid < next { mid } else { v };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Confusion counts for binary labels and predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn tally(labels: &[u8], preds: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&y, &p) in labels.iter().zip(preds) {
            match (y, p) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fn_ += 1,
                (_, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn balanced_accuracy(&self) -> Result<f64> {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        if pos == 0 {
            return Err(ModelError::MissingClass("positive"));
        }
        if neg == 0 {
            return Err(ModelError::MissingClass("negative"));
        }
        Ok((self.tp as f64 / pos as f64 + self.tn as f64 / neg as f64) / 2.0)
    }
}

/// `(TPR + TNR) / 2`.
pub fn balanced_accuracy(labels: &[u8], preds: &[u8]) -> Result<f64> {
    if labels.len() != preds.len() {
        return Err(ModelError::LengthMismatch {
            what: "predictions",
            expected: labels.len(),
            found: preds.len(),
        });
    }
    Confusion::tally(labels, preds).balanced_accuracy()
}

pub const GRID_STEPS: usize = 50;

/// Decision thresholds 0.01, 0.02, ..., 0.50.
pub fn threshold_grid() -> [f64; GRID_STEPS] {
    std::array::from_fn(|k| (k + 1) as f64 / 100.0)
}

/// A row is predicted positive when its score is at least the threshold.
pub fn binarize(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Grid threshold with the highest balanced accuracy; ties go to the smallest.
pub fn threshold_sweep(scores: &[f64], labels: &[u8]) -> Result<ThresholdResult> {
    if scores.len() != labels.len() {
        return Err(ModelError::LengthMismatch {
            what: "scores",
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let mut best: Option<ThresholdResult> = None;
    for t in threshold_grid() {
        let ba = balanced_accuracy(labels, &binarize(scores, t))?;
        if best.is_none_or(|b| ba > b.balanced_accuracy) {
            best = Some(ThresholdResult {
                threshold: t,
                balanced_accuracy: ba,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Picks the candidate whose swept validation balanced accuracy is highest
/// (first wins on ties).
pub fn select_forest_config(
    candidates: &[ForestConfig],
    fit: &FeatureMatrix,
    fit_labels: &[u8],
    validation: &FeatureMatrix,
    validation_labels: &[u8],
) -> Result<(usize, ThresholdResult)> {
    let mut best: Option<(usize, ThresholdResult)> = None;
    for (i, cfg) in candidates.iter().enumerate() {
        let forest = TrainedForest::fit(cfg, fit, fit_labels, None)?;
        let r = threshold_sweep(&forest.predict_matrix(validation)?, validation_labels)?;
        if best.is_none_or(|(_, b)| r.balanced_accuracy > b.balanced_accuracy) {
            best = Some((i, r));
        }
    }
    best.ok_or(ModelError::NoTrees)
}
