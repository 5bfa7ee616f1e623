//! Config-driven multi-seed audit: split, synthesise, train, mitigate,
//! evaluate on the real test split, aggregate and write reports.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, ColumnKind, ColumnSpec, DatasetError, Preprocess, ProtectedSpec, Schema, Table};
use crate::fairness::FairnessError;
use crate::mitigation::{self, Evaluation, MitigationError, MitigationResult, Technique};
use crate::model::{self, FeatureMatrix, ForestConfig, ModelError, Scorer};
use crate::rng;
use crate::stats::{self, StatsError, Summary, TTestOutcome};
use crate::synthgen::{self, SynthError};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Placeholder replaced by the seed in external synthetic CSV paths.
pub const SEED_PLACEHOLDER: &str = "{seed}";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config version {found} is not supported (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: DatasetError,
    },
    #[error("{context}: {message}")]
    Runtime { context: String, message: String },
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report {path}: {message}")]
    Report { path: String, message: String },
}

impl ExperimentError {
    /// 1 config error, 2 data error, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Data { .. } | ExperimentError::Report { .. } => 2,
            ExperimentError::Runtime { .. } | ExperimentError::Output { .. } => 3,
        }
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

/// Failure inside one stage, before the seed context is attached.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(DatasetError),
    #[error("{0}")]
    Runtime(String),
}

impl From<DatasetError> for StageError {
    fn from(e: DatasetError) -> Self {
        StageError::Data(e)
    }
}

impl From<SynthError> for StageError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(d) => StageError::Data(d),
            other => StageError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for StageError {
            fn from(e: $t) -> Self {
                StageError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(ModelError, MitigationError, FairnessError, StatsError);

impl StageError {
    fn at(self, context: String) -> ExperimentError {
        match self {
            StageError::Data(source) => ExperimentError::Data { context, source },
            StageError::Runtime(message) => ExperimentError::Runtime { context, message },
        }
    }
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub label: String,
    pub protected: String,
    #[serde(default)]
    pub ignore: Vec<String>,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub preprocess: Preprocess,
}

impl DatasetConfig {
    pub fn schema(&self) -> Schema {
        Schema {
            columns: self.columns.clone(),
            label: self.label.clone(),
            protected: self.protected.clone(),
            ignore: self.ignore.clone(),
            delimiter: self.delimiter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub group_a: String,
    pub group_b: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticSource {
    Surrogate,
    External,
}

fn default_size() -> usize {
    synthgen::DEFAULT_SYNTH_ROWS
}

fn default_true() -> bool {
    true
}

fn default_nnaa_sample() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub source: SyntheticSource,
    /// External CSV; `{seed}` is replaced by the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_true")]
    pub copula: bool,
    /// Rows drawn from each side for nnAA.
    #[serde(default = "default_nnaa_sample")]
    pub nnaa_sample: usize,
    /// Free-form notes about how external data was produced (epochs, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn default_techniques() -> Vec<Technique> {
    Technique::ALL.to_vec()
}

fn default_floor() -> f64 {
    mitigation::DEFAULT_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationConfig {
    #[serde(default = "default_techniques")]
    pub techniques: Vec<Technique>,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "mitigation::default_reduction_grid")]
    pub reduction_grid: Vec<f64>,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        MitigationConfig {
            techniques: default_techniques(),
            floor: default_floor(),
            reduction_grid: mitigation::default_reduction_grid(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn default_split() -> f64 {
    0.7
}

fn default_validation() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetConfig,
    pub protected: PairConfig,
    #[serde(default = "ForestConfig::cardio")]
    pub model: ForestConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    /// Share of each arm's training rows held out for threshold and
    /// mitigation selection.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Probe {
            version: Option<u32>,
        }
        let probe: Probe = toml::from_str(text)?;
        match probe.version {
            Some(CONFIG_VERSION) => {}
            Some(found) => return Err(ConfigError::Version { found }),
            None => return Err(invalid("missing `version`")),
        }
        Ok(toml::from_str(text)?)
    }

    /// Parses and validates a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.resolve(&self.dataset.path)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn external_path(&self, seed: u64) -> Option<PathBuf> {
        let p = self.synthetic.path.as_ref()?;
        Some(self.resolve(Path::new(&p.replace(SEED_PLACEHOLDER, &seed.to_string()))))
    }

    pub fn spec(&self) -> ProtectedSpec {
        ProtectedSpec::new(&self.dataset.protected, &self.protected.group_a, &self.protected.group_b)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version { found: self.version });
        }
        if self.seeds.is_empty() {
            return Err(invalid("`seeds` is empty"));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(invalid("`seeds` contains duplicates"));
        }
        for (name, v) in [("split_ratio", self.split_ratio), ("validation_fraction", self.validation_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("`{name}` = {v} must lie in (0, 1)")));
            }
        }
        let m = &self.mitigation;
        if !(0.0..=1.0).contains(&m.floor) {
            return Err(invalid(format!("mitigation floor {} outside [0, 1]", m.floor)));
        }
        if m.techniques.contains(&Technique::Reduction) && m.reduction_grid.is_empty() {
            return Err(invalid("`reduction_grid` is empty"));
        }
        if m.reduction_grid.iter().any(|v| !v.is_finite()) {
            return Err(invalid("`reduction_grid` has a non-finite value"));
        }
        let mut seen = HashSet::new();
        if !m.techniques.iter().all(|t| seen.insert(*t)) {
            return Err(invalid("`techniques` lists a technique twice"));
        }
        if self.model.n_trees == 0 || self.model.min_leaf == 0 {
            return Err(invalid("model needs n_trees ≥ 1 and min_leaf ≥ 1"));
        }
        if self.protected.group_a == self.protected.group_b {
            return Err(invalid("protected groups must differ"));
        }
        let declared = |name: &str| self.dataset.columns.iter().find(|c| c.name == name);
        match declared(&self.dataset.protected) {
            Some(c) if c.kind == ColumnKind::Categorical => {}
            Some(_) => return Err(invalid(format!("protected column `{}` must be categorical", self.dataset.protected))),
            None => return Err(invalid(format!("protected column `{}` is not declared", self.dataset.protected))),
        }
        if declared(&self.dataset.label).is_none() {
            return Err(invalid(format!("label column `{}` is not declared", self.dataset.label)));
        }
        let data = self.dataset_path();
        if !data.is_file() {
            return Err(invalid(format!("dataset {} does not exist", data.display())));
        }
        let s = &self.synthetic;
        if s.size == 0 {
            return Err(invalid("synthetic size must be at least 1"));
        }
        if s.nnaa_sample < 2 {
            return Err(invalid("nnaa_sample must be at least 2"));
        }
        match s.source {
            SyntheticSource::External => {
                if s.path.is_none() {
                    return Err(invalid("external synthetic source needs `path`"));
                }
                for &seed in &self.seeds {
                    let p = self.external_path(seed).expect("path present");
                    if !p.is_file() {
                        return Err(invalid(format!("synthetic CSV {} does not exist", p.display())));
                    }
                }
            }
            SyntheticSource::Surrogate => {
                if s.path.is_some() {
                    return Err(invalid("`path` is only used with the external source"));
                }
            }
        }
        Ok(())
    }

    /// Same config restricted to the given seeds, in the given order.
    pub fn with_seeds(&self, seeds: &[u64]) -> Result<Self, ConfigError> {
        if let Some(s) = seeds.iter().find(|s| !self.seeds.contains(s)) {
            return Err(invalid(format!("seed {s} is not in the config")));
        }
        let mut c = self.clone();
        c.seeds = seeds.to_vec();
        c.validate()?;
        Ok(c)
    }
}

/// What one arm runs after its baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSettings {
    pub forest: ForestConfig,
    pub techniques: Vec<Technique>,
    pub floor: f64,
    pub reduction_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub threshold: f64,
    pub validation: Evaluation,
    pub test: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub n_fit: usize,
    pub n_validation: usize,
    pub baseline: BaselineResult,
    pub mitigations: Vec<MitigationResult>,
}

impl ArmResult {
    pub fn mitigation(&self, t: Technique) -> Option<&MitigationResult> {
        self.mitigations.iter().find(|m| m.technique == t)
    }
}

struct EvalSet<'a> {
    x: FeatureMatrix,
    labels: Vec<u8>,
    groups: Vec<&'a str>,
}

impl<'a> EvalSet<'a> {
    fn of(t: &'a Table) -> Self {
        EvalSet {
            x: FeatureMatrix::from_table(t),
            labels: t.labels(),
            groups: t.groups(),
        }
    }

    fn eval(&self, preds: &[u8], spec: &ProtectedSpec) -> Result<Evaluation, StageError> {
        Ok(Evaluation::of(&self.labels, preds, &self.groups, spec)?)
    }
}

/// Baseline plus the configured mitigations for one arm. Models train on
/// `fit`, every selection (threshold, multiplier, HPS policy) uses
/// `validation`, and `test` is only ever evaluated.
pub fn run_arm(
    settings: &ArmSettings,
    fit: &Table,
    validation: &Table,
    test: &Table,
    spec: &ProtectedSpec,
    seed: u64,
) -> Result<ArmResult, StageError> {
    let fit_set = EvalSet::of(fit);
    let val = EvalSet::of(validation);
    let tst = EvalSet::of(test);
    let forest = &settings.forest;

    let base = model::TrainedForest::fit(forest, &fit_set.x, &fit_set.labels, None)?;
    let val_scores = base.score(&val.x)?;
    let test_scores = base.score(&tst.x)?;
    let sweep = model::threshold_sweep(&val_scores, &val.labels)?;
    let baseline = BaselineResult {
        threshold: sweep.threshold,
        validation: val.eval(&model::binarize(&val_scores, sweep.threshold), spec)?,
        test: tst.eval(&model::binarize(&test_scores, sweep.threshold), spec)?,
    };

    let blank = |technique: Technique, source: &str, validation: Evaluation, test: Evaluation| MitigationResult {
        technique,
        scores_source: source.to_string(),
        threshold: None,
        instance_weights: None,
        lambda: None,
        grid: None,
        derived_predictor: None,
        floor_unmet: false,
        validation,
        test,
    };

    let mut mitigations = Vec::new();
    for &technique in &settings.techniques {
        let result = match technique {
            Technique::EoThreshold => {
                let s = mitigation::eo_threshold_search(&val_scores, &val.labels, &val.groups, spec, settings.floor)?;
                let test_eval = tst.eval(&model::binarize(&test_scores, s.threshold), spec)?;
                let mut r = blank(technique, "baseline", Evaluation {
                    balanced_accuracy: s.balanced_accuracy,
                    fairness: s.fairness,
                }, test_eval);
                r.threshold = Some(s.threshold);
                r.floor_unmet = s.floor_unmet;
                r
            }
            Technique::Reweigh => {
                let cells = mitigation::reweigh_cells(&fit_set.labels, &fit_set.groups, spec)?;
                let w = mitigation::reweigh(&fit_set.labels, &fit_set.groups, spec)?;
                let m = model::TrainedForest::fit(forest, &fit_set.x, &fit_set.labels, Some(&w))?;
                let vs = m.score(&val.x)?;
                let s = mitigation::eo_threshold_search(&vs, &val.labels, &val.groups, spec, settings.floor)?;
                let test_eval = tst.eval(&model::binarize(&m.score(&tst.x)?, s.threshold), spec)?;
                let mut r = blank(technique, "reweighed", Evaluation {
                    balanced_accuracy: s.balanced_accuracy,
                    fairness: s.fairness,
                }, test_eval);
                r.threshold = Some(s.threshold);
                r.instance_weights = Some(cells);
                r.floor_unmet = s.floor_unmet;
                r
            }
            Technique::Reduction => {
                let out = mitigation::grid_reduction(forest, fit, validation, spec, &settings.reduction_grid, settings.floor)?;
                let s = out.search;
                let test_eval = tst.eval(&model::binarize(&out.model.score(&tst.x)?, s.threshold), spec)?;
                let mut r = blank(technique, "reduction", Evaluation {
                    balanced_accuracy: s.balanced_accuracy,
                    fairness: s.fairness,
                }, test_eval);
                r.threshold = Some(s.threshold);
                r.lambda = Some(out.lambda);
                r.grid = Some(out.points);
                r.floor_unmet = s.floor_unmet;
                r
            }
            Technique::Hps => {
                let val_base = model::binarize(&val_scores, sweep.threshold);
                let test_base = model::binarize(&test_scores, sweep.threshold);
                let policy = mitigation::hps_fit(&val_base, &val.labels, &val.groups, spec)?;
                let val_out = mitigation::hps_apply(&policy, &val_base, &val.groups, rng::derive_seed(seed, 3))?;
                let test_out = mitigation::hps_apply(&policy, &test_base, &tst.groups, rng::derive_seed(seed, 4))?;
                let val_eval = val.eval(&val_out, spec)?;
                let floor_unmet = val_eval.balanced_accuracy < settings.floor;
                let mut r = blank(technique, "baseline", val_eval, tst.eval(&test_out, spec)?);
                r.threshold = Some(sweep.threshold);
                r.derived_predictor = Some(policy);
                r.floor_unmet = floor_unmet;
                r
            }
        };
        mitigations.push(result);
    }
    Ok(ArmResult {
        n_fit: fit.n_rows(),
        n_validation: validation.n_rows(),
        baseline,
        mitigations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub group: String,
    /// Percentages of the real training split and of the synthetic table.
    pub real: f64,
    pub synthetic: f64,
    /// Percent change; absent when the real share is zero.
    pub change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_synthetic: usize,
    pub prevalence: Vec<PrevalenceRow>,
    pub real: ArmResult,
    pub synthetic: ArmResult,
    pub nnaa: f64,
}

fn prevalence_rows(real: &Table, synth: &Table, attribute: &str) -> Result<Vec<PrevalenceRow>, StageError> {
    let r = dataset::prevalence_rates(real, attribute)?;
    let s = dataset::prevalence_rates(synth, attribute)?;
    let groups: std::collections::BTreeSet<&String> = r.keys().chain(s.keys()).collect();
    Ok(groups
        .into_iter()
        .map(|g| {
            let (a, b) = (r.get(g).copied().unwrap_or(0.0), s.get(g).copied().unwrap_or(0.0));
            PrevalenceRow {
                group: g.clone(),
                real: a,
                synthetic: b,
                change: stats::percent_change(a, b).ok(),
            }
        })
        .collect())
}

fn subsample(t: &Table, k: usize, seed: u64) -> Table {
    if t.n_rows() <= k {
        return t.clone();
    }
    let mut idx: Vec<usize> = (0..t.n_rows()).collect();
    rng::shuffle(&mut rng::stream(seed), &mut idx);
    idx.truncate(k);
    idx.sort_unstable();
    t.take_rows(&idx)
}

/// Synthetic table for one seed, fitted on `train` only or read from disk.
fn synthetic_for(cfg: &ExperimentConfig, real: &Table, train: &Table, test: &Table, seed: u64) -> Result<Table, StageError> {
    match cfg.synthetic.source {
        SyntheticSource::Surrogate => {
            let train_ids: HashSet<u64> = train.row_ids().iter().copied().collect();
            if let Some(id) = test.row_ids().iter().find(|id| train_ids.contains(id)) {
                return Err(StageError::Runtime(format!("test row {id} would leak into the generator input")));
            }
            let g = synthgen::fit_generator(train, cfg.synthetic.copula, seed)?;
            Ok(synthgen::generate(&g, cfg.synthetic.size, rng::derive_seed(seed, 1))?)
        }
        SyntheticSource::External => {
            let path = cfg.external_path(seed).expect("validated");
            let t = dataset::load_csv(&path, &cfg.dataset.schema())?;
            Ok(t.align_levels(real)?)
        }
    }
}

fn run_seed(cfg: &ExperimentConfig, real: &Table, seed: u64) -> Result<SeedRecord, StageError> {
    let spec = cfg.spec();
    let split = dataset::train_test_split(real, seed, cfg.split_ratio)?;
    let synth_raw = synthetic_for(cfg, real, &split.train, &split.test, seed)?;
    let prevalence = prevalence_rows(&split.train, &synth_raw, &spec.attribute)?;

    let pre = cfg.dataset.preprocess;
    let train_p = pre.apply(&split.train)?;
    let test_p = pre.apply(&split.test)?;
    let synth_p = pre.apply(&synth_raw)?;

    let nnaa = synthgen::nn_adversarial_accuracy(
        &subsample(&train_p, cfg.synthetic.nnaa_sample, rng::derive_seed(seed, 5)),
        &subsample(&synth_p, cfg.synthetic.nnaa_sample, rng::derive_seed(seed, 6)),
    )?;

    let train_r = dataset::restrict_subgroups(&train_p, &spec)?;
    let test_r = dataset::restrict_subgroups(&test_p, &spec)?;
    let synth_r = dataset::restrict_subgroups(&synth_p, &spec)?;

    let settings = ArmSettings {
        forest: cfg.model.with_seed(rng::derive_seed(cfg.model.seed, seed)),
        techniques: cfg.mitigation.techniques.clone(),
        floor: cfg.mitigation.floor,
        reduction_grid: cfg.mitigation.reduction_grid.clone(),
    };
    let keep = 1.0 - cfg.validation_fraction;
    let real_parts = dataset::train_test_split(&train_r, rng::derive_seed(seed, 2), keep)?;
    let synth_parts = dataset::train_test_split(&synth_r, rng::derive_seed(seed, 2), keep)?;
    let real_arm = run_arm(&settings, &real_parts.train, &real_parts.test, &test_r, &spec, seed)?;
    let synth_arm = run_arm(&settings, &synth_parts.train, &synth_parts.test, &test_r, &spec, seed)?;
    info!(
        "seed {seed}: real BA {:.4}, synthetic BA {:.4}",
        real_arm.baseline.test.balanced_accuracy, synth_arm.baseline.test.balanced_accuracy
    );
    Ok(SeedRecord {
        seed,
        n_train: train_r.n_rows(),
        n_test: test_r.n_rows(),
        n_synthetic: synth_r.n_rows(),
        prevalence,
        real: real_arm,
        synthetic: synth_arm,
        nnaa,
    })
}

pub const METRICS: [&str; 4] = [
    "balanced_accuracy",
    "equal_opportunity_difference",
    "average_odds_difference",
    "equalized_odds",
];

fn metric(e: &Evaluation, name: &str) -> f64 {
    match name {
        "balanced_accuracy" => e.balanced_accuracy,
        "equal_opportunity_difference" => e.fairness.equal_opportunity_difference,
        "average_odds_difference" => e.fairness.average_odds_difference,
        "equalized_odds" => e.fairness.equalized_odds,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceAggregate {
    pub group: String,
    pub real_mean: f64,
    pub synthetic_mean: f64,
    pub change: Option<f64>,
    pub test: TTestOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// A mitigation against the baseline of the same arm.
    RespectiveBaseline,
    /// The same technique trained on real versus synthetic data.
    RealVsSynthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub metric: String,
    pub test: TTestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub comparison: Comparison,
    /// `baseline` or a technique name.
    pub technique: String,
    /// `real`, `synthetic`, or `both` for real-versus-synthetic rows.
    pub arm: String,
    pub tests: Vec<MetricTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub technique: String,
    pub arm: String,
    pub metric: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub nnaa: Summary,
    pub prevalence: Vec<PrevalenceAggregate>,
    pub significance: Vec<SignificanceRow>,
    pub summaries: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub records: Vec<SeedRecord>,
    pub aggregate: Aggregate,
}

/// Test-split evaluations of one technique on one arm, in seed order.
fn series(records: &[SeedRecord], technique: Option<Technique>, synthetic: bool) -> Option<Vec<&Evaluation>> {
    records
        .iter()
        .map(|r| {
            let arm = if synthetic { &r.synthetic } else { &r.real };
            match technique {
                None => Some(&arm.baseline.test),
                Some(t) => arm.mitigation(t).map(|m| &m.test),
            }
        })
        .collect()
}

fn values(evals: &[&Evaluation], name: &str) -> Vec<f64> {
    evals.iter().map(|e| metric(e, name)).collect()
}

fn tests(a: &[&Evaluation], b: &[&Evaluation]) -> Result<Vec<MetricTest>, StatsError> {
    METRICS
        .iter()
        .map(|m| {
            Ok(MetricTest {
                metric: m.to_string(),
                test: TTestOutcome::of(&values(a, m), &values(b, m))?,
            })
        })
        .collect()
}

fn technique_name(t: Option<Technique>) -> String {
    t.map_or("baseline".into(), |t| t.name().into())
}

fn techniques_of(records: &[SeedRecord]) -> Vec<Technique> {
    Technique::ALL
        .into_iter()
        .filter(|&t| records.iter().all(|r| r.real.mitigation(t).is_some() && r.synthetic.mitigation(t).is_some()))
        .collect()
}

/// Cross-seed summaries and paired tests, computed from the per-seed records only.
pub fn aggregate(records: &[SeedRecord]) -> Result<Aggregate, StatsError> {
    let nnaa = stats::summarize(&records.iter().map(|r| r.nnaa).collect::<Vec<_>>())?;

    let mut groups: Vec<String> = records.iter().flat_map(|r| r.prevalence.iter().map(|p| p.group.clone())).collect();
    groups.sort();
    groups.dedup();
    let mut prevalence = Vec::new();
    for g in groups {
        let pick = |f: fn(&PrevalenceRow) -> f64| -> Vec<f64> {
            records
                .iter()
                .map(|r| r.prevalence.iter().find(|p| p.group == g).map_or(0.0, f))
                .collect()
        };
        let (real, synth) = (pick(|p| p.real), pick(|p| p.synthetic));
        let real_mean = real.iter().sum::<f64>() / real.len() as f64;
        let synthetic_mean = synth.iter().sum::<f64>() / synth.len() as f64;
        prevalence.push(PrevalenceAggregate {
            group: g,
            real_mean,
            synthetic_mean,
            change: stats::percent_change(real_mean, synthetic_mean).ok(),
            test: TTestOutcome::of(&real, &synth)?,
        });
    }

    let techniques = techniques_of(records);
    let mut significance = Vec::new();
    for &t in &techniques {
        for (arm, synthetic) in [("real", false), ("synthetic", true)] {
            let m = series(records, Some(t), synthetic).expect("present");
            let b = series(records, None, synthetic).expect("baseline");
            significance.push(SignificanceRow {
                comparison: Comparison::RespectiveBaseline,
                technique: t.name().into(),
                arm: arm.into(),
                tests: tests(&m, &b)?,
            });
        }
    }
    for t in std::iter::once(None).chain(techniques.iter().map(|&t| Some(t))) {
        let r = series(records, t, false).expect("present");
        let s = series(records, t, true).expect("present");
        significance.push(SignificanceRow {
            comparison: Comparison::RealVsSynthetic,
            technique: technique_name(t),
            arm: "both".into(),
            tests: tests(&r, &s)?,
        });
    }

    let mut summaries = Vec::new();
    for t in std::iter::once(None).chain(techniques.iter().map(|&t| Some(t))) {
        for (arm, synthetic) in [("real", false), ("synthetic", true)] {
            let evals = series(records, t, synthetic).expect("present");
            for m in METRICS {
                summaries.push(MetricSummary {
                    technique: technique_name(t),
                    arm: arm.into(),
                    metric: m.into(),
                    summary: stats::summarize(&values(&evals, m))?,
                });
            }
        }
    }
    Ok(Aggregate {
        nnaa,
        prevalence,
        significance,
        summaries,
    })
}

/// Runs every configured seed (in parallel) and aggregates in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AuditReport> {
    cfg.validate()?;
    let path = cfg.dataset_path();
    let real = dataset::load_csv(&path, &cfg.dataset.schema()).map_err(|source| ExperimentError::Data {
        context: format!("loading {}", path.display()),
        source,
    })?;
    cfg.spec().validate(&real).map_err(|source| ExperimentError::Data {
        context: "protected pair".into(),
        source,
    })?;
    let records = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &real, seed).map_err(|e| e.at(format!("seed {seed}"))))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&records).map_err(|e| ExperimentError::Runtime {
        context: "aggregation".into(),
        message: e.to_string(),
    })?;
    Ok(AuditReport {
        format_version: REPORT_FORMAT_VERSION,
        config: cfg.clone(),
        records,
        aggregate,
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const OUTPUT_FILES: [&str; 6] = [
    REPORT_FILE,
    "prevalence.csv",
    "significance.csv",
    "scatter_real_vs_synth.csv",
    "boxplot_mitigation.csv",
    "tradeoff_scatter.csv",
];

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn outcome_cells(t: &TTestOutcome) -> [String; 4] {
    match t {
        TTestOutcome::Tested(r) => [num(r.t_statistic), r.degrees_of_freedom.to_string(), num(r.p_value), "tested".into()],
        TTestOutcome::ZeroVariance { .. } => [String::new(), String::new(), String::new(), "zero_variance".into()],
        TTestOutcome::TooFewPairs { .. } => [String::new(), String::new(), String::new(), "too_few_pairs".into()],
    }
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let path = dir.join(name);
    let err = |e: csv::Error| ExperimentError::Output {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|source| ExperimentError::Output {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `report.json` and the five CSV views into `dir`.
pub fn emit_outputs(report: &AuditReport, dir: &Path) -> Result<()> {
    let out_err = |path: &Path, source| ExperimentError::Output {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| ExperimentError::Runtime {
        context: "serialising report".into(),
        message: e.to_string(),
    })?;
    let rp = dir.join(REPORT_FILE);
    fs::write(&rp, json + "\n").map_err(|e| out_err(&rp, e))?;

    let agg = &report.aggregate;
    let rows = agg
        .prevalence
        .iter()
        .map(|p| {
            let [t, df, pv, status] = outcome_cells(&p.test);
            vec![p.group.clone(), num(p.real_mean), num(p.synthetic_mean), opt(p.change), t, df, pv, status]
        })
        .collect();
    write_csv(dir, "prevalence.csv", &["group", "real", "synthetic", "change_percent", "t_statistic", "df", "p_value", "status"], rows)?;

    let mut header = vec!["comparison", "technique", "arm"];
    let cols: Vec<String> = METRICS.iter().flat_map(|m| [format!("{m}_p"), format!("{m}_t")]).collect();
    header.extend(cols.iter().map(String::as_str));
    let rows = agg
        .significance
        .iter()
        .map(|s| {
            let comparison = match s.comparison {
                Comparison::RespectiveBaseline => "respective_baseline",
                Comparison::RealVsSynthetic => "real_vs_synthetic",
            };
            let mut row = vec![comparison.to_string(), s.technique.clone(), s.arm.clone()];
            for m in &s.tests {
                match &m.test {
                    TTestOutcome::Tested(r) => row.extend([num(r.p_value), num(r.t_statistic)]),
                    TTestOutcome::ZeroVariance { .. } => row.extend(["zero_variance".to_string(), String::new()]),
                    TTestOutcome::TooFewPairs { .. } => row.extend(["too_few_pairs".to_string(), String::new()]),
                }
            }
            row
        })
        .collect();
    write_csv(dir, "significance.csv", &header, rows)?;

    let mut rows = Vec::new();
    for m in METRICS {
        for r in &report.records {
            let (a, b) = (&r.real.baseline.test, &r.synthetic.baseline.test);
            rows.push(vec![
                r.seed.to_string(),
                m.to_string(),
                num(metric(a, m)),
                num(metric(b, m)),
                num(a.balanced_accuracy),
                num(b.balanced_accuracy),
            ]);
        }
    }
    write_csv(
        dir,
        "scatter_real_vs_synth.csv",
        &["seed", "metric", "real", "synthetic", "real_balanced_accuracy", "synthetic_balanced_accuracy"],
        rows,
    )?;

    let rows = agg
        .summaries
        .iter()
        .map(|s| {
            let q = &s.summary;
            vec![
                s.technique.clone(),
                s.arm.clone(),
                s.metric.clone(),
                q.n.to_string(),
                num(q.mean),
                num(q.sd),
                num(q.min),
                num(q.q1),
                num(q.median),
                num(q.q3),
                num(q.max),
            ]
        })
        .collect();
    write_csv(
        dir,
        "boxplot_mitigation.csv",
        &["technique", "arm", "metric", "n", "mean", "sd", "min", "q1", "median", "q3", "max"],
        rows,
    )?;

    let techniques = techniques_of(&report.records);
    let mut rows = Vec::new();
    for t in std::iter::once(None).chain(techniques.iter().map(|&t| Some(t))) {
        for (arm, synthetic) in [("real", false), ("synthetic", true)] {
            let evals = series(&report.records, t, synthetic).expect("present");
            for (r, e) in report.records.iter().zip(&evals) {
                let mut row = vec![technique_name(t), arm.to_string(), r.seed.to_string()];
                row.extend(METRICS.iter().map(|m| num(metric(e, m))));
                rows.push(row);
            }
            let mut row = vec![technique_name(t), arm.to_string(), "mean".to_string()];
            row.extend(METRICS.iter().map(|m| {
                let v = values(&evals, m);
                num(v.iter().sum::<f64>() / v.len() as f64)
            }));
            rows.push(row);
        }
    }
    let mut header = vec!["technique", "arm", "seed"];
    header.extend(METRICS);
    write_csv(dir, "tradeoff_scatter.csv", &header, rows)
}

pub fn read_report(dir: &Path) -> Result<AuditReport> {
    let path = dir.join(REPORT_FILE);
    let report_err = |message: String| ExperimentError::Report {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(&path).map_err(|e| report_err(e.to_string()))?;
    let report: AuditReport = serde_json::from_str(&text).map_err(|e| report_err(e.to_string()))?;
    if report.format_version != REPORT_FORMAT_VERSION {
        return Err(report_err(format!("unsupported format version {}", report.format_version)));
    }
    Ok(report)
}

/// Recomputes the aggregate from the stored per-seed records.
pub fn reaggregate(mut report: AuditReport) -> Result<AuditReport> {
    report.aggregate = aggregate(&report.records).map_err(|e| ExperimentError::Runtime {
        context: "aggregation".into(),
        message: e.to_string(),
    })?;
    Ok(report)
}
