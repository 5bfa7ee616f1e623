//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the code it checks.
#![allow(dead_code)]

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn tpr(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }
    pub fn fpr(&self) -> Option<f64> {
        (self.fp + self.tn > 0).then(|| self.fp as f64 / (self.fp + self.tn) as f64)
    }
}

fn count(scores: &[f64], labels: &[u8], keep: impl Fn(usize) -> bool, t: f64) -> Counts {
    let mut c = Counts::default();
    for i in 0..scores.len() {
        if !keep(i) {
            continue;
        }
        let p = scores[i] >= t;
        match (labels[i] == 1, p) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn ba(c: Counts) -> f64 {
    (c.tp as f64 / (c.tp + c.fn_) as f64 + c.tn as f64 / (c.tn + c.fp) as f64) / 2.0
}

/// Every grid threshold with its balanced accuracy; best is the maximum, first
/// on ties.
pub fn brute_sweep(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for t in grid() {
        let b = ba(count(scores, labels, |_| true, t));
        if b > best.1 {
            best = (t, b);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteEo {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub equalized_odds: f64,
    pub floor_unmet: bool,
}

/// Enumerates all 50 thresholds: minimum equalized odds among those with
/// balanced accuracy at least `floor`, else maximum balanced accuracy.
pub fn brute_eo(scores: &[f64], labels: &[u8], in_a: &[bool], in_b: &[bool], floor: f64) -> BruteEo {
    let mut rows = Vec::new();
    for t in grid() {
        let ca = count(scores, labels, |i| in_a[i], t);
        let cb = count(scores, labels, |i| in_b[i], t);
        let (Some(ta), Some(fa), Some(tb), Some(fb)) = (ca.tpr(), ca.fpr(), cb.tpr(), cb.fpr()) else {
            continue;
        };
        let eo = (fa - fb).abs().max((ta - tb).abs());
        rows.push((t, ba(count(scores, labels, |_| true, t)), eo));
    }
    let met: Vec<_> = rows.iter().copied().filter(|r| r.1 >= floor).collect();
    if met.is_empty() {
        let mut best = rows[0];
        for r in &rows {
            if r.1 > best.1 {
                best = *r;
            }
        }
        return BruteEo {
            threshold: best.0,
            balanced_accuracy: best.1,
            equalized_odds: best.2,
            floor_unmet: true,
        };
    }
    let mut best = met[0];
    for r in &met {
        if r.2 < best.2 || (r.2 == best.2 && r.1 > best.1) {
            best = *r;
        }
    }
    BruteEo {
        threshold: best.0,
        balanced_accuracy: best.1,
        equalized_odds: best.2,
        floor_unmet: false,
    }
}

// ---- HPS: intersection of the two groups' ROC-reachable polygons ----

type P = (f64, f64);
const EPS: f64 = 1e-12;

fn cross(o: P, a: P, b: P) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn hull(mut pts: Vec<P>) -> Vec<P> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a.0 - b.0).abs() < EPS && (a.1 - b.1).abs() < EPS);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<P> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= EPS {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<P> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= EPS {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn on_segment(p: P, a: P, b: P) -> bool {
    cross(a, b, p).abs() <= 1e-10
        && p.0 >= a.0.min(b.0) - 1e-10
        && p.0 <= a.0.max(b.0) + 1e-10
        && p.1 >= a.1.min(b.1) - 1e-10
        && p.1 <= a.1.max(b.1) + 1e-10
}

fn inside(p: P, poly: &[P]) -> bool {
    match poly.len() {
        1 => (p.0 - poly[0].0).abs() < 1e-10 && (p.1 - poly[0].1).abs() < 1e-10,
        2 => on_segment(p, poly[0], poly[1]),
        n => (0..n).all(|i| cross(poly[i], poly[(i + 1) % n], p) >= -1e-10),
    }
}

fn edges(poly: &[P]) -> Vec<(P, P)> {
    match poly.len() {
        0 | 1 => vec![],
        2 => vec![(poly[0], poly[1])],
        n => (0..n).map(|i| (poly[i], poly[(i + 1) % n])).collect(),
    }
}

fn intersect(a: (P, P), b: (P, P)) -> Option<P> {
    let r = (a.1 .0 - a.0 .0, a.1 .1 - a.0 .1);
    let s = (b.1 .0 - b.0 .0, b.1 .1 - b.0 .1);
    let den = r.0 * s.1 - r.1 * s.0;
    if den.abs() < EPS {
        // Parallel: collinear overlaps are covered by endpoint containment.
        return None;
    }
    let q = (b.0 .0 - a.0 .0, b.0 .1 - a.0 .1);
    let t = (q.0 * s.1 - q.1 * s.0) / den;
    let u = (q.0 * r.1 - q.1 * r.0) / den;
    ((-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&u))
        .then_some((a.0 .0 + t * r.0, a.0 .1 + t * r.1))
}

/// Base classifier of one group: rates plus class counts.
#[derive(Debug, Clone, Copy)]
pub struct GroupBase {
    pub tpr: f64,
    pub fpr: f64,
    pub n_pos: f64,
    pub n_neg: f64,
}

fn reachable(g: GroupBase) -> Vec<P> {
    hull(vec![(0.0, 0.0), (1.0, 1.0), (g.fpr, g.tpr), (1.0 - g.fpr, 1.0 - g.tpr)])
}

/// Minimum expected misclassification count over all common (FPR, TPR)
/// points reachable by randomised relabelling in both groups.
pub fn hps_min_loss(a: GroupBase, b: GroupBase) -> f64 {
    let (pa, pb) = (reachable(a), reachable(b));
    let mut cands: Vec<P> = Vec::new();
    cands.extend(pa.iter().copied().filter(|&p| inside(p, &pb)));
    cands.extend(pb.iter().copied().filter(|&p| inside(p, &pa)));
    for ea in edges(&pa) {
        for eb in edges(&pb) {
            cands.extend(intersect(ea, eb));
        }
    }
    let n_pos = a.n_pos + b.n_pos;
    let n_neg = a.n_neg + b.n_neg;
    cands
        .iter()
        .map(|&(x, y)| n_pos * (1.0 - y) + n_neg * x)
        .fold(f64::INFINITY, f64::min)
}

// ---- Student t via quadrature of the density ----

/// `Γ(k / 2)` for a positive integer `k`, exact recursion from Γ(1) and Γ(1/2).
fn gamma_half(k: u32) -> f64 {
    let (mut g, mut x) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
    while x < k as f64 / 2.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    g
}

pub fn t_density(x: f64, df: u32) -> f64 {
    let v = df as f64;
    gamma_half(df + 1) / ((v * std::f64::consts::PI).sqrt() * gamma_half(df)) * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, 1e-12, 50)
}

/// Two-sided p-value `1 - 2∫_0^|t| f`.
pub fn t_two_sided_quadrature(t: f64, df: u32) -> f64 {
    let f = |x: f64| t_density(x, df);
    1.0 - 2.0 * integrate(&f, 0.0, t.abs())
}

// ---- fixtures ----

/// Two groups over five score levels, built so that threshold 0.30 has about
/// equalized odds 0.02 at balanced accuracy 0.60 and 0.40 has 0.01 at 0.57:
/// the floor rules out the fairer threshold.
pub fn constructed_scores() -> (Vec<f64>, Vec<u8>, Vec<&'static str>) {
    // Score levels and (positives, negatives) per level for each group.
    let levels = [1.0, 0.495, 0.395, 0.295, 0.0];
    let b = [(5, 5), (25, 11), (20, 14), (30, 40), (20, 30)];
    let a = [(5, 5), (26, 11), (21, 14), (28, 45), (20, 25)];
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (name, cells) in [("a", a), ("b", b)] {
        for (&s, &(pos, neg)) in levels.iter().zip(&cells) {
            for (y, k) in [(1u8, pos), (0u8, neg)] {
                for _ in 0..k {
                    scores.push(s);
                    labels.push(y);
                    groups.push(name);
                }
            }
        }
    }
    (scores, labels, groups)
}


/// Scores and labels where scores are informative with random strength, and
/// group membership (a, b, or neither).
pub fn random_scored(seed: u64, n: usize) -> (Vec<f64>, Vec<u8>, Vec<&'static str>) {
    let mut r = rng(seed);
    let strength: f64 = r.random_range(0.0..0.6);
    let pos_rate: f64 = r.random_range(0.1..0.6);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let y = u8::from(r.random::<f64>() < pos_rate);
        let g = match r.random_range(0..10) {
            0..=4 => "a",
            5..=8 => "b",
            _ => "c",
        };
        let bump = if g == "a" { 0.05 } else { 0.0 };
        let s = (0.5 * r.random::<f64>() + strength * f64::from(y) * r.random::<f64>() + bump).min(1.0);
        // Quantise to hit grid values exactly some of the time.
        let s = if r.random::<f64>() < 0.3 { (s * 100.0).round() / 100.0 } else { s };
        scores.push(s);
        labels.push(y);
        groups.push(g);
    }
    (scores, labels, groups)
}
