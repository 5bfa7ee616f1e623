//! Fairness mitigation: EO thresholding, reweighing, grid-search reduction
//! and HPS post-processing.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ProtectedSpec, Table};
use crate::fairness::{self, FairnessError, FairnessScores};
use crate::model::{self, FeatureMatrix, ModelError, Scorer, WeightedTrainer};
use crate::rng;

/// Minimum balanced accuracy a mitigated model must keep.
pub const DEFAULT_FLOOR: f64 = 0.58;

/// Tolerance on the equalized rate gaps of a fitted HPS policy.
pub const HPS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MitigationError {
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{what}: expected {expected} values, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no grid threshold has defined rates for both groups")]
    NoAdmissibleThreshold,
    #[error("cell (group `{group}`, label {label}) is empty, reweighing weight is infinite")]
    EmptyCell { group: String, label: u8 },
    #[error("row {row} has group `{group}`, outside the protected pair")]
    UnknownGroup { row: usize, group: String },
    #[error("reduction grid is empty")]
    EmptyGrid,
    #[error("every reduction grid point failed; last error: {0}")]
    AllGridPointsFailed(String),
}

pub type Result<T, E = MitigationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    EoThreshold,
    Reweigh,
    Reduction,
    Hps,
}

impl Technique {
    pub const ALL: [Technique; 4] = [
        Technique::EoThreshold,
        Technique::Reweigh,
        Technique::Reduction,
        Technique::Hps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Technique::EoThreshold => "eo_threshold",
            Technique::Reweigh => "reweigh",
            Technique::Reduction => "reduction",
            Technique::Hps => "hps",
        }
    }
}

impl std::fmt::Display for Technique {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(MitigationError::LengthMismatch { what, expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoSearch {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub fairness: FairnessScores,
    /// No grid threshold reached the floor; the threshold is the one with the
    /// best balanced accuracy instead.
    pub floor_unmet: bool,
}

/// Scores one threshold: `None` when a group rate is undefined.
fn evaluate_threshold(
    scores: &[f64],
    labels: &[u8],
    groups: &[&str],
    spec: &ProtectedSpec,
    t: f64,
) -> Result<Option<(f64, FairnessScores)>> {
    let preds = model::binarize(scores, t);
    let fair = match fairness::evaluate(labels, &preds, groups, spec) {
        Ok(f) => f,
        Err(FairnessError::UndefinedRate { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    Ok(Some((model::balanced_accuracy(labels, &preds)?, fair)))
}

/// Among grid thresholds whose balanced accuracy reaches `floor`, the one with
/// the lowest equalized odds (ties: higher balanced accuracy, then smaller
/// threshold). Falls back to the best balanced accuracy with `floor_unmet`.
pub fn eo_threshold_search(
    scores: &[f64],
    labels: &[u8],
    groups: &[&str],
    spec: &ProtectedSpec,
    floor: f64,
) -> Result<EoSearch> {
    check_len("scores", labels.len(), scores.len())?;
    check_len("groups", labels.len(), groups.len())?;
    let mut best: Option<EoSearch> = None;
    let mut best_ba: Option<EoSearch> = None;
    for t in model::threshold_grid() {
        let Some((ba, fair)) = evaluate_threshold(scores, labels, groups, spec, t)? else {
            continue;
        };
        let cand = EoSearch {
            threshold: t,
            balanced_accuracy: ba,
            fairness: fair,
            floor_unmet: false,
        };
        if best_ba.as_ref().is_none_or(|b| ba > b.balanced_accuracy) {
            best_ba = Some(cand.clone());
        }
        if ba < floor {
            continue;
        }
        let better = best.as_ref().is_none_or(|b| {
            let (eo, beo) = (cand.fairness.equalized_odds, b.fairness.equalized_odds);
            eo < beo || (eo == beo && ba > b.balanced_accuracy)
        });
        if better {
            best = Some(cand);
        }
    }
    match (best, best_ba) {
        (Some(b), _) => Ok(b),
        (None, Some(b)) => Ok(EoSearch { floor_unmet: true, ..b }),
        (None, None) => Err(MitigationError::NoAdmissibleThreshold),
    }
}

/// Group index (0 for group a, 1 for group b) of every row.
fn group_index(groups: &[&str], spec: &ProtectedSpec) -> Result<Vec<usize>> {
    groups
        .iter()
        .enumerate()
        .map(|(row, &g)| {
            if g == spec.group_a {
                Ok(0)
            } else if g == spec.group_b {
                Ok(1)
            } else {
                Err(MitigationError::UnknownGroup {
                    row,
                    group: g.to_string(),
                })
            }
        })
        .collect()
}

/// Reweighing weight of each `(group, label)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub group: String,
    pub label: u8,
    pub count: u64,
    pub weight: f64,
}

/// `w(g, y) = n_g · n_y / (n · n_gy)` for each of the four cells.
pub fn reweigh_cells(labels: &[u8], groups: &[&str], spec: &ProtectedSpec) -> Result<Vec<CellWeight>> {
    check_len("groups", labels.len(), groups.len())?;
    let gi = group_index(groups, spec)?;
    let mut cell = [[0u64; 2]; 2];
    for (&g, &y) in gi.iter().zip(labels) {
        cell[g][usize::from(y == 1)] += 1;
    }
    let n = labels.len() as f64;
    let mut out = Vec::with_capacity(4);
    for (g, name) in [&spec.group_a, &spec.group_b].into_iter().enumerate() {
        for y in 0..2 {
            let n_gy = cell[g][y];
            if n_gy == 0 {
                return Err(MitigationError::EmptyCell {
                    group: name.clone(),
                    label: y as u8,
                });
            }
            let n_g = (cell[g][0] + cell[g][1]) as f64;
            let n_y = (cell[0][y] + cell[1][y]) as f64;
            out.push(CellWeight {
                group: name.clone(),
                label: y as u8,
                count: n_gy,
                weight: n_g * n_y / (n * n_gy as f64),
            });
        }
    }
    Ok(out)
}

/// Per-row reweighing weights; under them group and label are independent.
pub fn reweigh(labels: &[u8], groups: &[&str], spec: &ProtectedSpec) -> Result<Vec<f64>> {
    let cells = reweigh_cells(labels, groups, spec)?;
    let gi = group_index(groups, spec)?;
    Ok(gi
        .iter()
        .zip(labels)
        .map(|(&g, &y)| cells[2 * g + usize::from(y == 1)].weight)
        .collect())
}

/// Cost-sensitive relabelling for multiplier `lambda`.
///
/// Each row gets the signed cost `c = (2y - 1) + lambda·s`, where
/// `s = +n_pos / n_pos(a)` on positive rows of group a,
/// `s = -n_pos / n_pos(b)` on positive rows of group b and `s = 0` on negative
/// rows. The penalty term is the Lagrangian of the true-positive-rate gap
/// `TPR_a - TPR_b` scaled to the count of positives. The new label is
/// `c > 0` and the instance weight is `|c|`; `lambda = 0` gives the original
/// labels with unit weights.
pub fn reduction_costs(labels: &[u8], groups: &[&str], spec: &ProtectedSpec, lambda: f64) -> Result<(Vec<u8>, Vec<f64>)> {
    check_len("groups", labels.len(), groups.len())?;
    let gi = group_index(groups, spec)?;
    let mut pos = [0u64; 2];
    for (&g, &y) in gi.iter().zip(labels) {
        if y == 1 {
            pos[g] += 1;
        }
    }
    let total = (pos[0] + pos[1]) as f64;
    for (g, name) in [&spec.group_a, &spec.group_b].into_iter().enumerate() {
        if pos[g] == 0 {
            return Err(MitigationError::EmptyCell {
                group: name.clone(),
                label: 1,
            });
        }
    }
    let scale = [total / pos[0] as f64, -total / pos[1] as f64];
    let mut new_labels = Vec::with_capacity(labels.len());
    let mut weights = Vec::with_capacity(labels.len());
    for (&g, &y) in gi.iter().zip(labels) {
        let c = if y == 1 { 1.0 + lambda * scale[g] } else { -1.0 };
        new_labels.push(u8::from(c > 0.0));
        weights.push(c.abs());
    }
    Ok((new_labels, weights))
}

/// `n` evenly spaced multipliers covering `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// The default reduction grid: 11 multipliers in `[-1, 1]`.
pub fn default_reduction_grid() -> Vec<f64> {
    linear_grid(-1.0, 1.0, 11)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    /// `None` when training at this multiplier failed.
    pub search: Option<EoSearch>,
}

pub struct ReductionOutcome<M> {
    pub lambda: f64,
    pub model: M,
    pub search: EoSearch,
    pub points: Vec<GridPoint>,
}

/// Trains one cost-sensitive model per multiplier on `fit`, thresholds each
/// with [`eo_threshold_search`] on `validation`, and keeps the model with the
/// lowest equalized odds among those meeting the floor (or overall, flagged,
/// when none does). Ties go to the earlier grid point.
pub fn grid_reduction<T: WeightedTrainer>(
    trainer: &T,
    fit: &Table,
    validation: &Table,
    spec: &ProtectedSpec,
    grid: &[f64],
    floor: f64,
) -> Result<ReductionOutcome<T::Model>> {
    if grid.is_empty() {
        return Err(MitigationError::EmptyGrid);
    }
    let x = FeatureMatrix::from_table(fit);
    let labels = fit.labels();
    let groups = fit.groups();
    let vx = FeatureMatrix::from_table(validation);
    let vlabels = validation.labels();
    let vgroups = validation.groups();
    let costs = grid
        .iter()
        .map(|&l| reduction_costs(&labels, &groups, spec, l))
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<Result<(T::Model, EoSearch)>> = costs
        .par_iter()
        .map(|(y, w)| {
            let m = trainer.train(&x, y, Some(w))?;
            let s = m.score(&vx)?;
            let search = eo_threshold_search(&s, &vlabels, &vgroups, spec, floor)?;
            Ok((m, search))
        })
        .collect();

    let mut points = Vec::with_capacity(grid.len());
    let mut kept = Vec::new();
    let mut last_err = None;
    for (&lambda, r) in grid.iter().zip(results) {
        match r {
            Ok((m, s)) => {
                points.push(GridPoint {
                    lambda,
                    search: Some(s.clone()),
                });
                kept.push((lambda, m, s));
            }
            Err(e) => {
                warn!("reduction grid point {lambda} failed: {e}");
                points.push(GridPoint { lambda, search: None });
                last_err = Some(e.to_string());
            }
        }
    }
    if kept.is_empty() {
        return Err(MitigationError::AllGridPointsFailed(last_err.unwrap_or_default()));
    }
    let any_met = kept.iter().any(|(_, _, s)| !s.floor_unmet);
    let mut best: Option<usize> = None;
    for (i, (_, _, s)) in kept.iter().enumerate() {
        if any_met && s.floor_unmet {
            continue;
        }
        let better = best.is_none_or(|b| {
            let o = &kept[b].2;
            let (eo, beo) = (s.fairness.equalized_odds, o.fairness.equalized_odds);
            eo < beo || (eo == beo && s.balanced_accuracy > o.balanced_accuracy)
        });
        if better {
            best = Some(i);
        }
    }
    let (lambda, model, mut search) = kept.swap_remove(best.expect("at least one kept point"));
    search.floor_unmet = !any_met;
    Ok(ReductionOutcome {
        lambda,
        model,
        search,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPolicy {
    /// P(output positive | base prediction positive).
    pub p_keep_positive: f64,
    /// P(output positive | base prediction negative).
    pub p_flip_negative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateGaps {
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpsPolicy {
    pub group_a: String,
    pub group_b: String,
    pub a: GroupPolicy,
    pub b: GroupPolicy,
    /// Derived-predictor `(TPR_a - TPR_b, FPR_a - FPR_b)` on the fitting data.
    pub fit_gaps: RateGaps,
    /// Expected misclassification count on the fitting data.
    pub fit_loss: f64,
}

impl HpsPolicy {
    pub fn identity(spec: &ProtectedSpec) -> Self {
        let id = GroupPolicy {
            p_keep_positive: 1.0,
            p_flip_negative: 0.0,
        };
        HpsPolicy {
            group_a: spec.group_a.clone(),
            group_b: spec.group_b.clone(),
            a: id,
            b: id,
            fit_gaps: RateGaps { tpr: 0.0, fpr: 0.0 },
            fit_loss: 0.0,
        }
    }
}

/// Base confusion of one group: rates and class counts.
#[derive(Debug, Clone, Copy)]
struct BaseRates {
    tpr: f64,
    fpr: f64,
    n_pos: f64,
    n_neg: f64,
}

/// Variable order: `[keep_a, flip_a, keep_b, flip_b]`.
type Vars = [f64; 4];

fn derived(v: &Vars, a: BaseRates, b: BaseRates) -> (RateGaps, f64) {
    let tpr = |r: BaseRates, k: f64, f: f64| r.tpr * k + (1.0 - r.tpr) * f;
    let fpr = |r: BaseRates, k: f64, f: f64| r.fpr * k + (1.0 - r.fpr) * f;
    let (ta, fa) = (tpr(a, v[0], v[1]), fpr(a, v[0], v[1]));
    let (tb, fb) = (tpr(b, v[2], v[3]), fpr(b, v[2], v[3]));
    let loss = a.n_pos * (1.0 - ta) + a.n_neg * fa + b.n_pos * (1.0 - tb) + b.n_neg * fb;
    (RateGaps { tpr: ta - tb, fpr: fa - fb }, loss)
}

/// Solves the HPS linear program exactly by enumerating the vertices of the
/// feasible polytope. Each of the four variables is either fixed at 0, fixed
/// at 1, or free; with at most two free variables the two equality
/// constraints pin them down when the system is non-singular. Minimum
/// expected loss wins, ties go to the policy closest (L1) to the identity.
fn solve_hps(a: BaseRates, b: BaseRates) -> Vars {
    // Rows: TPR gap, FPR gap as linear functions of the variables.
    let m = [
        [a.tpr, 1.0 - a.tpr, -b.tpr, -(1.0 - b.tpr)],
        [a.fpr, 1.0 - a.fpr, -b.fpr, -(1.0 - b.fpr)],
    ];
    let n = a.n_pos + a.n_neg + b.n_pos + b.n_neg;
    let identity: Vars = [1.0, 0.0, 1.0, 0.0];
    let mut best: Option<(Vars, f64, f64)> = None;
    for code in 0..81u32 {
        // 0 = free, 1 = fixed at 0, 2 = fixed at 1.
        let mut state = [0u32; 4];
        let mut c = code;
        for s in &mut state {
            *s = c % 3;
            c /= 3;
        }
        let free: Vec<usize> = (0..4).filter(|&i| state[i] == 0).collect();
        if free.len() > 2 {
            continue;
        }
        let mut v = [0.0; 4];
        for i in 0..4 {
            if state[i] == 2 {
                v[i] = 1.0;
            }
        }
        // Right-hand side after moving fixed terms across.
        let rhs: [f64; 2] = std::array::from_fn(|r| -(0..4).filter(|&i| state[i] != 0).map(|i| m[r][i] * v[i]).sum::<f64>());
        match free[..] {
            [] => {}
            [i] => {
                let r = if m[0][i].abs() >= m[1][i].abs() { 0 } else { 1 };
                if m[r][i].abs() < 1e-14 {
                    continue;
                }
                v[i] = rhs[r] / m[r][i];
            }
            [i, j] => {
                let det = m[0][i] * m[1][j] - m[0][j] * m[1][i];
                if det.abs() < 1e-14 {
                    continue;
                }
                v[i] = (rhs[0] * m[1][j] - m[0][j] * rhs[1]) / det;
                v[j] = (m[0][i] * rhs[1] - rhs[0] * m[1][i]) / det;
            }
            _ => unreachable!(),
        }
        if v.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) {
            continue;
        }
        for x in &mut v {
            *x = x.clamp(0.0, 1.0);
        }
        let (gaps, loss) = derived(&v, a, b);
        if gaps.tpr.abs() > HPS_TOL || gaps.fpr.abs() > HPS_TOL {
            continue;
        }
        let dist: f64 = v.iter().zip(&identity).map(|(x, y)| (x - y).abs()).sum();
        let tol = 1e-12 * n.max(1.0);
        let better = best.is_none_or(|(_, bl, bd)| loss < bl - tol || (loss <= bl + tol && dist < bd - 1e-12));
        if better {
            best = Some((v, loss, dist));
        }
    }
    // The all-negative policy is always a feasible vertex.
    best.map(|b| b.0).unwrap_or([0.0; 4])
}

/// Fits the HPS derived predictor on binary base predictions. The linear
/// program is solved exactly, so no randomness is involved in fitting.
pub fn hps_fit(base_preds: &[u8], labels: &[u8], groups: &[&str], spec: &ProtectedSpec) -> Result<HpsPolicy> {
    let (ra, rb) = fairness::group_rates(labels, base_preds, groups, spec)?;
    let base = |r: &fairness::GroupRates| BaseRates {
        tpr: r.tpr,
        fpr: r.fpr,
        n_pos: (r.tp + r.fn_) as f64,
        n_neg: (r.fp + r.tn) as f64,
    };
    let (a, b) = (base(&ra), base(&rb));
    let v = solve_hps(a, b);
    let (fit_gaps, fit_loss) = derived(&v, a, b);
    Ok(HpsPolicy {
        group_a: spec.group_a.clone(),
        group_b: spec.group_b.clone(),
        a: GroupPolicy {
            p_keep_positive: v[0],
            p_flip_negative: v[1],
        },
        b: GroupPolicy {
            p_keep_positive: v[2],
            p_flip_negative: v[3],
        },
        fit_gaps,
        fit_loss,
    })
}

/// Randomised relabelling. Row `i` draws one uniform from a stream seeded with
/// `derive_seed(seed, i)` and outputs positive when the draw is below the
/// policy probability for its group and base prediction.
pub fn hps_apply(policy: &HpsPolicy, base_preds: &[u8], groups: &[&str], seed: u64) -> Result<Vec<u8>> {
    check_len("groups", base_preds.len(), groups.len())?;
    base_preds
        .iter()
        .zip(groups)
        .enumerate()
        .map(|(i, (&p, &g))| {
            let gp = if g == policy.group_a {
                &policy.a
            } else if g == policy.group_b {
                &policy.b
            } else {
                return Err(MitigationError::UnknownGroup {
                    row: i,
                    group: g.to_string(),
                });
            };
            let prob = if p == 1 { gp.p_keep_positive } else { gp.p_flip_negative };
            let u = rng::unit(&mut rng::stream(rng::derive_seed(seed, i as u64)));
            Ok(u8::from(u < prob))
        })
        .collect()
}

/// Headline metrics of a classifier on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub balanced_accuracy: f64,
    pub fairness: FairnessScores,
}

impl Evaluation {
    pub fn of(labels: &[u8], preds: &[u8], groups: &[&str], spec: &ProtectedSpec) -> Result<Self> {
        Ok(Evaluation {
            balanced_accuracy: model::balanced_accuracy(labels, preds)?,
            fairness: fairness::evaluate(labels, preds, groups, spec)?,
        })
    }
}

/// Outcome of one mitigation technique on one arm. Only the fields relevant
/// to the technique are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationResult {
    pub technique: Technique,
    /// Which model produced the scores (`baseline`, `reweighed`, `reduction`).
    pub scores_source: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<f64>,
    /// The per-row weights take one of these four values.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub instance_weights: Option<Vec<CellWeight>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<Vec<GridPoint>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub derived_predictor: Option<HpsPolicy>,
    pub floor_unmet: bool,
    pub validation: Evaluation,
    pub test: Evaluation,
}
