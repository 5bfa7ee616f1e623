//! Synthetic data: a Gaussian-copula surrogate generator, planted-bias
//! fixtures with known optimal rates, and nearest-neighbour adversarial
//! accuracy (nnAA).

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dataset::{Column, ColumnData, ColumnKind, DatasetError, Table};
use crate::rng;

/// Default number of rows drawn by [`generate`].
pub const DEFAULT_SYNTH_ROWS: usize = 100_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot fit a generator on an empty table")]
    Empty,
    #[error("nnAA needs at least two rows in each set, got {0}")]
    TooFewRows(usize),
    #[error("tables differ in schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid planted-bias spec: {0}")]
    InvalidSpec(String),
    #[error("target TPR gap {target} is unreachable (range {lo:.4} to {hi:.4})")]
    Infeasible { target: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnModel {
    /// Sorted training values; sampled through the step inverse ECDF.
    Numeric { name: String, sorted: Vec<f64> },
    /// Level list and the cumulative frequency at the end of each level.
    Categorical {
        name: String,
        levels: Vec<String>,
        cumulative: Vec<f64>,
    },
}

impl ColumnModel {
    fn name(&self) -> &str {
        match self {
            ColumnModel::Numeric { name, .. } | ColumnModel::Categorical { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Copula {
    /// Indices of the columns that take part.
    pub members: Vec<usize>,
    /// Row-major lower Cholesky factor of the latent correlation matrix.
    pub cholesky: Vec<f64>,
}

/// Per-column empirical marginals, optionally tied together by a Gaussian
/// copula over normal scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalGenerator {
    pub columns: Vec<ColumnModel>,
    pub label: String,
    pub protected: String,
    pub copula: Option<Copula>,
    pub seed: u64,
}

/// Normal scores of average ranks, `Φ⁻¹(r / (n + 1))`.
fn rank_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let norm = std_normal();
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = norm.inverse_cdf(rank / (n as f64 + 1.0));
        for &k in &idx[i..=j] {
            out[k] = z;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Fits marginals and, if requested, the copula correlation. Numeric columns
/// contribute van der Waerden rank scores; categorical columns contribute the
/// normal score of the midpoint of their cumulative-frequency interval.
/// Constant columns carry no dependence and are left out of the copula.
pub fn fit_generator(train: &Table, use_copula: bool, seed: u64) -> Result<MarginalGenerator> {
    if train.is_empty() {
        return Err(SynthError::Empty);
    }
    let n = train.n_rows();
    let norm = std_normal();
    let mut columns = Vec::new();
    let mut latent: Vec<(usize, Vec<f64>)> = Vec::new();
    for (ci, c) in train.columns().iter().enumerate() {
        match &c.data {
            ColumnData::Numeric(v) => {
                let mut sorted = v.clone();
                sorted.sort_by(f64::total_cmp);
                let constant = sorted[0] == sorted[n - 1];
                if use_copula && constant && n > 1 {
                    warn!("column `{}` is constant, excluded from the copula", c.name);
                } else if use_copula && !constant {
                    latent.push((ci, rank_scores(v)));
                }
                columns.push(ColumnModel::Numeric {
                    name: c.name.clone(),
                    sorted,
                });
            }
            ColumnData::Categorical { levels, codes } => {
                let mut counts = vec![0usize; levels.len()];
                for &k in codes {
                    counts[k as usize] += 1;
                }
                let mut cumulative = Vec::with_capacity(levels.len());
                let mut acc = 0;
                for &k in &counts {
                    acc += k;
                    cumulative.push(acc as f64 / n as f64);
                }
                let observed = counts.iter().filter(|&&k| k > 0).count();
                if use_copula && observed > 1 {
                    let mid: Vec<f64> = (0..levels.len())
                        .map(|k| {
                            let lo = if k == 0 { 0.0 } else { cumulative[k - 1] };
                            norm.inverse_cdf((lo + cumulative[k]) / 2.0)
                        })
                        .collect();
                    latent.push((ci, codes.iter().map(|&k| mid[k as usize]).collect()));
                }
                columns.push(ColumnModel::Categorical {
                    name: c.name.clone(),
                    levels: levels.clone(),
                    cumulative,
                });
            }
        }
    }
    let copula = (latent.len() > 1).then(|| {
        let k = latent.len();
        let mut corr = DMatrix::<f64>::identity(k, k);
        for i in 0..k {
            for j in 0..i {
                let r = pearson(&latent[i].1, &latent[j].1);
                corr[(i, j)] = r;
                corr[(j, i)] = r;
            }
        }
        let mut jitter = 0.0;
        let l = loop {
            let m = (&corr + DMatrix::<f64>::identity(k, k) * jitter) / (1.0 + jitter);
            if let Some(ch) = m.cholesky() {
                break ch.l();
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        };
        Copula {
            members: latent.iter().map(|(ci, _)| *ci).collect(),
            cholesky: (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect(),
        }
    });
    Ok(MarginalGenerator {
        columns,
        label: train.label_column().to_string(),
        protected: train.protected_column().to_string(),
        copula,
        seed,
    })
}

/// Draws `n` rows with the fitted schema.
pub fn generate(g: &MarginalGenerator, n: usize, seed: u64) -> Result<Table> {
    let norm = std_normal();
    let mut r = rng::stream(seed);
    let ncol = g.columns.len();
    let mut slot = vec![usize::MAX; ncol];
    let (k, chol) = match &g.copula {
        Some(c) => {
            for (i, &ci) in c.members.iter().enumerate() {
                slot[ci] = i;
            }
            (c.members.len(), DMatrix::from_row_slice(c.members.len(), c.members.len(), &c.cholesky))
        }
        None => (0, DMatrix::zeros(0, 0)),
    };
    let mut num: Vec<Vec<f64>> = vec![Vec::new(); ncol];
    let mut cat: Vec<Vec<u32>> = vec![Vec::new(); ncol];
    let mut u = vec![0.0; ncol];
    // Fallback for a draw of exactly 1: the last level actually observed.
    let last_level: Vec<usize> = g
        .columns
        .iter()
        .map(|m| match m {
            ColumnModel::Categorical { cumulative, .. } => (0..cumulative.len())
                .rev()
                .find(|&k| cumulative[k] > if k == 0 { 0.0 } else { cumulative[k - 1] })
                .unwrap_or(0),
            ColumnModel::Numeric { .. } => 0,
        })
        .collect();
    for _ in 0..n {
        if k > 0 {
            let eps = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut r));
            let z = &chol * eps;
            for (ci, s) in slot.iter().enumerate() {
                if *s != usize::MAX {
                    u[ci] = norm.cdf(z[*s]);
                }
            }
        }
        for (ci, model) in g.columns.iter().enumerate() {
            let ui = if slot[ci] == usize::MAX { rng::unit(&mut r) } else { u[ci] };
            match model {
                ColumnModel::Numeric { sorted, .. } => {
                    let m = sorted.len();
                    num[ci].push(sorted[((ui * m as f64).floor() as usize).min(m - 1)]);
                }
                ColumnModel::Categorical { cumulative, .. } => {
                    let code = cumulative.iter().position(|&c| ui < c).unwrap_or(last_level[ci]);
                    cat[ci].push(code as u32);
                }
            }
        }
    }
    let columns = g
        .columns
        .iter()
        .enumerate()
        .map(|(ci, model)| match model {
            ColumnModel::Numeric { name, .. } => Column::numeric(name.clone(), std::mem::take(&mut num[ci])),
            ColumnModel::Categorical { name, levels, .. } => Column {
                name: name.clone(),
                data: ColumnData::Categorical {
                    levels: levels.clone(),
                    codes: std::mem::take(&mut cat[ci]),
                },
            },
        })
        .collect();
    Ok(Table::new(columns, &g.label, &g.protected)?)
}

impl MarginalGenerator {
    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(ColumnModel::name).collect()
    }
}

/// Standardised numeric plus one-hot categorical encoding over the pooled sets.
type Points = Vec<Vec<f64>>;

fn embed(real: &Table, synth: &Table) -> Result<(Points, Points)> {
    let rn = real.column_names();
    let sn = synth.column_names();
    if rn != sn {
        return Err(SynthError::SchemaMismatch(format!("columns {rn:?} vs {sn:?}")));
    }
    let mut re = vec![Vec::new(); real.n_rows()];
    let mut se = vec![Vec::new(); synth.n_rows()];
    for (a, b) in real.columns().iter().zip(synth.columns()) {
        match (&a.data, &b.data) {
            (ColumnData::Numeric(x), ColumnData::Numeric(y)) => {
                let n = (x.len() + y.len()) as f64;
                let mean = x.iter().chain(y).sum::<f64>() / n;
                let var = x.iter().chain(y).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                for (row, v) in re.iter_mut().zip(x) {
                    row.push((v - mean) / sd);
                }
                for (row, v) in se.iter_mut().zip(y) {
                    row.push((v - mean) / sd);
                }
            }
            (ColumnData::Categorical { .. }, ColumnData::Categorical { .. }) => {
                let mut union: Vec<&str> = a.levels().unwrap().iter().chain(b.levels().unwrap()).map(String::as_str).collect();
                union.sort_unstable();
                union.dedup();
                for (t, rows) in [(a, &mut re), (b, &mut se)] {
                    let levels = t.levels().unwrap();
                    let pos: Vec<usize> = levels.iter().map(|l| union.binary_search(&l.as_str()).unwrap()).collect();
                    let ColumnData::Categorical { codes, .. } = &t.data else { unreachable!() };
                    for (row, &code) in rows.iter_mut().zip(codes) {
                        let base = row.len();
                        row.resize(base + union.len(), 0.0);
                        row[base + pos[code as usize]] = 1.0;
                    }
                }
            }
            _ => {
                return Err(SynthError::SchemaMismatch(format!("column `{}` differs in kind", a.name)));
            }
        }
    }
    Ok((re, se))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Share of `from` rows whose nearest row in `other` is strictly farther than
/// their nearest other row in `from`.
fn nearer_to_own(from: &[Vec<f64>], other: &[Vec<f64>]) -> f64 {
    let hits: usize = (0..from.len())
        .into_par_iter()
        .map(|i| {
            let own = from
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| dist2(&from[i], r))
                .fold(f64::INFINITY, f64::min);
            let cross = other.iter().map(|r| dist2(&from[i], r)).fold(f64::INFINITY, f64::min);
            usize::from(cross > own)
        })
        .sum();
    hits as f64 / from.len() as f64
}

/// `nnAA = ½[mean 1(d_RS > d_RR) + mean 1(d_SR > d_SS)]` with Euclidean
/// distance in the standardised one-hot space. 0.5 means the sets cannot be
/// told apart by nearest neighbours.
pub fn nn_adversarial_accuracy(real: &Table, synth: &Table) -> Result<f64> {
    for t in [real, synth] {
        if t.n_rows() < 2 {
            return Err(SynthError::TooFewRows(t.n_rows()));
        }
    }
    let (re, se) = embed(real, synth)?;
    Ok(0.5 * (nearer_to_own(&re, &se) + nearer_to_own(&se, &re)))
}

/// A two-group population with one informative feature whose strength
/// differs by group, plus pure-noise features.
///
/// Within group `g`, the signal is `N(+m_g, 1)` for positives and
/// `N(-m_g, 1)` for negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBiasSpec {
    pub group_a: String,
    pub group_b: String,
    /// Share of rows in group a.
    pub prevalence_a: f64,
    pub positive_rate_a: f64,
    pub positive_rate_b: f64,
    pub signal_a: f64,
    pub signal_b: f64,
    pub noise_features: usize,
}

/// True and false positive rate of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub fpr: f64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn in_unit(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SynthError::InvalidSpec(format!("{name} = {p} must lie strictly between 0 and 1")));
    }
    Ok(())
}

impl PlantedBiasSpec {
    pub fn validate(&self) -> Result<()> {
        in_unit("prevalence_a", self.prevalence_a)?;
        in_unit("positive_rate_a", self.positive_rate_a)?;
        in_unit("positive_rate_b", self.positive_rate_b)?;
        for (name, m) in [("signal_a", self.signal_a), ("signal_b", self.signal_b)] {
            if !(m > 0.0 && m.is_finite()) {
                return Err(SynthError::InvalidSpec(format!("{name} = {m} must be positive")));
            }
        }
        if self.group_a == self.group_b {
            return Err(SynthError::InvalidSpec("groups must differ".into()));
        }
        Ok(())
    }

    /// Overall positive rate.
    pub fn prevalence(&self) -> f64 {
        self.prevalence_a * self.positive_rate_a + (1.0 - self.prevalence_a) * self.positive_rate_b
    }

    fn cut(&self, signal: f64, rate: f64) -> f64 {
        (logit(self.prevalence()) - logit(rate)) / (2.0 * signal)
    }

    fn rates(&self, signal: f64, rate: f64) -> Rates {
        let t = self.cut(signal, rate);
        let norm = std_normal();
        Rates {
            tpr: norm.cdf(signal - t),
            fpr: norm.cdf(-signal - t),
        }
    }

    /// Per-group rates of the classifier that maximises balanced accuracy,
    /// which predicts positive when the posterior is at least the overall
    /// positive rate. Within group `g` that is `x ≥ t_g` with
    /// `t_g = (logit π - logit π_g) / (2 m_g)`.
    pub fn optimal_rates(&self) -> (Rates, Rates) {
        (
            self.rates(self.signal_a, self.positive_rate_a),
            self.rates(self.signal_b, self.positive_rate_b),
        )
    }

    /// `TPR_a - TPR_b` of the balanced-accuracy-optimal classifier.
    pub fn target_tpr_gap(&self) -> f64 {
        let (a, b) = self.optimal_rates();
        a.tpr - b.tpr
    }

    /// Copy of `self` with `signal_a` solved so that [`Self::target_tpr_gap`]
    /// equals `gap`.
    pub fn with_target_tpr_gap(&self, gap: f64) -> Result<Self> {
        self.validate()?;
        let mut s = self.clone();
        // TPR_a(m) = Φ(m - c / 2m) rises with m once m ≥ sqrt(-c / 2).
        let c = logit(s.prevalence()) - logit(s.positive_rate_a);
        let mut lo = (-c / 2.0).max(0.0).sqrt().max(1e-6);
        let mut hi = 12.0;
        let f = |s: &mut Self, m: f64| {
            s.signal_a = m;
            s.target_tpr_gap()
        };
        let (flo, fhi) = (f(&mut s, lo), f(&mut s, hi));
        if !(flo <= gap && gap <= fhi) {
            return Err(SynthError::Infeasible { target: gap, lo: flo, hi: fhi });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(&mut s, mid) < gap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        s.signal_a = 0.5 * (lo + hi);
        Ok(s)
    }
}

pub const PLANTED_SIGNAL: &str = "signal";
pub const PLANTED_GROUP: &str = "group";
pub const PLANTED_LABEL: &str = "label";

/// Samples `n` rows: `signal`, `noise_1..k`, `group` and `label`.
pub fn make_planted_bias(spec: &PlantedBiasSpec, n: usize, seed: u64) -> Result<Table> {
    spec.validate()?;
    let mut r = rng::stream(seed);
    let mut signal = Vec::with_capacity(n);
    let mut noise: Vec<Vec<f64>> = vec![Vec::with_capacity(n); spec.noise_features];
    let mut group = Vec::with_capacity(n);
    let mut label = Vec::with_capacity(n);
    for _ in 0..n {
        let in_a = rng::unit(&mut r) < spec.prevalence_a;
        let (rate, m) = if in_a {
            (spec.positive_rate_a, spec.signal_a)
        } else {
            (spec.positive_rate_b, spec.signal_b)
        };
        let y = rng::unit(&mut r) < rate;
        let e: f64 = StandardNormal.sample(&mut r);
        signal.push(if y { m } else { -m } + e);
        for col in &mut noise {
            col.push(StandardNormal.sample(&mut r));
        }
        group.push(u32::from(!in_a));
        label.push(f64::from(u8::from(y)));
    }
    let mut columns = vec![Column::numeric(PLANTED_SIGNAL, signal)];
    for (i, col) in noise.into_iter().enumerate() {
        columns.push(Column::numeric(format!("noise_{}", i + 1), col));
    }
    columns.push(Column {
        name: PLANTED_GROUP.into(),
        data: ColumnData::Categorical {
            levels: vec![spec.group_a.clone(), spec.group_b.clone()],
            codes: group,
        },
    });
    columns.push(Column::numeric(PLANTED_LABEL, label));
    Ok(Table::new(columns, PLANTED_LABEL, PLANTED_GROUP)?)
}

/// Column kinds of a generator's output, for schema checks.
pub fn generator_kinds(g: &MarginalGenerator) -> Vec<ColumnKind> {
    g.columns
        .iter()
        .map(|c| match c {
            ColumnModel::Numeric { .. } => ColumnKind::Numeric,
            ColumnModel::Categorical { .. } => ColumnKind::Categorical,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat_table(values: &[&str], labels: Vec<f64>) -> Table {
        Table::new(
            vec![Column::categorical("c", values), Column::numeric("y", labels)],
            "y",
            "c",
        )
        .unwrap()
    }

    #[test]
    fn categorical_frequencies_reproduced() {
        let mut values = vec!["A"; 70];
        values.extend(vec!["B"; 30]);
        let labels = (0..100).map(|i| (i % 2) as f64).collect();
        let g = fit_generator(&cat_table(&values, labels), true, 1).unwrap();
        let out = generate(&g, 10_000, 2).unwrap();
        let share_a = out.groups().iter().filter(|&&v| v == "A").count() as f64 / 10_000.0;
        assert!((share_a - 0.7).abs() < 0.02, "{share_a}");
    }

    #[test]
    fn one_row_is_copied() {
        let t = Table::new(
            vec![
                Column::numeric("x", vec![3.5]),
                Column::categorical("c", &["k"]),
                Column::numeric("y", vec![1.0]),
            ],
            "y",
            "c",
        )
        .unwrap();
        let g = fit_generator(&t, true, 0).unwrap();
        let out = generate(&g, 5, 9).unwrap();
        assert_eq!(out.n_rows(), 5);
        for i in 0..5 {
            assert_eq!(out.row(i), t.row(0));
        }
    }

    fn correlated(n: usize, seed: u64) -> Table {
        let mut r = rng::stream(seed);
        let mut x = Vec::new();
        let mut z = Vec::new();
        let mut g = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            x.push(50.0 + 10.0 * a);
            z.push(a + 0.3 * b);
            g.push(if rng::unit(&mut r) < 0.6 { "f" } else { "m" });
            y.push(f64::from(u8::from(a > 0.2)));
        }
        Table::new(
            vec![
                Column::numeric("x", x),
                Column::numeric("z", z),
                Column::categorical("g", &g),
                Column::numeric("y", y),
            ],
            "y",
            "g",
        )
        .unwrap()
    }

    #[test]
    fn values_stay_in_observed_support_and_determinism() {
        let t = correlated(500, 1);
        let g = fit_generator(&t, true, 0).unwrap();
        let a = generate(&g, 2000, 5).unwrap();
        assert_eq!(a, generate(&g, 2000, 5).unwrap());
        assert_ne!(a, generate(&g, 2000, 6).unwrap());
        assert_eq!(a.column_names(), t.column_names());
        let ColumnData::Numeric(src) = &t.column("x").unwrap().data else { panic!() };
        let ColumnData::Numeric(out) = &a.column("x").unwrap().data else { panic!() };
        for v in out {
            assert!(src.contains(v));
        }
    }

    #[test]
    fn copula_keeps_dependence() {
        let t = correlated(2000, 2);
        let ColumnData::Numeric(sx) = &t.column("x").unwrap().data else { panic!() };
        let ColumnData::Numeric(sz) = &t.column("z").unwrap().data else { panic!() };
        let src = pearson(sx, sz);
        let out = generate(&fit_generator(&t, true, 0).unwrap(), 5000, 3).unwrap();
        let ColumnData::Numeric(ox) = &out.column("x").unwrap().data else { panic!() };
        let ColumnData::Numeric(oz) = &out.column("z").unwrap().data else { panic!() };
        assert!((pearson(ox, oz) - src).abs() < 0.05);
        let indep = generate(&fit_generator(&t, false, 0).unwrap(), 5000, 3).unwrap();
        let ColumnData::Numeric(ix) = &indep.column("x").unwrap().data else { panic!() };
        let ColumnData::Numeric(iz) = &indep.column("z").unwrap().data else { panic!() };
        assert!(pearson(ix, iz).abs() < 0.05);
    }

    #[test]
    fn nnaa_copy_and_single_row() {
        let t = correlated(100, 4);
        assert_eq!(nn_adversarial_accuracy(&t, &t.clone()).unwrap(), 0.0);
        let one = t.take_rows(&[0]);
        assert!(matches!(nn_adversarial_accuracy(&t, &one), Err(SynthError::TooFewRows(1))));
    }

    #[test]
    fn planted_gap_solver() {
        let base = PlantedBiasSpec {
            group_a: "a".into(),
            group_b: "b".into(),
            prevalence_a: 0.5,
            positive_rate_a: 0.4,
            positive_rate_b: 0.4,
            signal_a: 1.0,
            signal_b: 0.5,
            noise_features: 2,
        };
        let s = base.with_target_tpr_gap(0.2).unwrap();
        assert!((s.target_tpr_gap() - 0.2).abs() < 1e-9);
        // Equal positive rates put the cut at zero, so TPR_g = Φ(m_g).
        let n = std_normal();
        assert!((n.cdf(s.signal_a) - n.cdf(0.5) - 0.2).abs() < 1e-9);
        assert!((s.signal_a - 1.235).abs() < 0.01);
        assert!(matches!(base.with_target_tpr_gap(0.6), Err(SynthError::Infeasible { .. })));
        let same = PlantedBiasSpec { signal_a: 0.5, ..base };
        assert!(same.target_tpr_gap().abs() < 1e-15);
    }

    #[test]
    fn planted_table_shape() {
        let spec = PlantedBiasSpec {
            group_a: "Female".into(),
            group_b: "Male".into(),
            prevalence_a: 0.65,
            positive_rate_a: 0.3,
            positive_rate_b: 0.4,
            signal_a: 1.0,
            signal_b: 1.0,
            noise_features: 3,
        };
        let t = make_planted_bias(&spec, 20_000, 1).unwrap();
        assert_eq!(t.column_names(), vec!["signal", "noise_1", "noise_2", "noise_3", "group", "label"]);
        let prev = crate::dataset::prevalence_rates(&t, "group").unwrap();
        assert!((prev["Female"] - 65.0).abs() < 1.0);
        assert!(make_planted_bias(&PlantedBiasSpec { prevalence_a: 1.2, ..spec }, 5, 0).is_err());
    }
}
