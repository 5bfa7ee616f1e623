//! Paired t-tests, run summaries and percent change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Significance level used for the `significant` flag.
pub const ALPHA: f64 = 0.05;

/// Convergence tolerance of the incomplete-beta continued fraction.
pub const INC_BETA_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("paired differences have zero variance, p-value undefined")]
    ZeroVariance,
    #[error("cannot summarise an empty series")]
    Empty,
    #[error("percent change from a zero reference")]
    ZeroReference,
    #[error("non-finite input value")]
    NonFinite,
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut s = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < INC_BETA_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub significant: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
fn sample_sd(v: &[f64], m: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Paired t-test on `d_i = a_i - b_i`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let m = mean(&d);
    let sd = sample_sd(&d, m);
    // Differences equal up to rounding count as constant.
    if sd <= 1e-12 * m.abs() || sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = m / (sd / (n as f64).sqrt());
    let df = n - 1;
    let p = student_t_two_sided(t, df as f64);
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        significant: p < ALPHA,
    })
}

/// A t-test result, or the reason it could not be computed. Keeps undefined
/// cases explicit in serialized reports instead of emitting NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TTestOutcome {
    Tested(TTestResult),
    ZeroVariance { mean_difference: f64 },
    TooFewPairs { n: usize },
}

impl TTestOutcome {
    pub fn of(a: &[f64], b: &[f64]) -> Result<Self> {
        match paired_t_test(a, b) {
            Ok(r) => Ok(TTestOutcome::Tested(r)),
            Err(StatsError::ZeroVariance) => Ok(TTestOutcome::ZeroVariance {
                mean_difference: mean(a) - mean(b),
            }),
            Err(StatsError::TooFewPairs(n)) => Ok(TTestOutcome::TooFewPairs { n }),
            Err(e) => Err(e),
        }
    }

    pub fn result(&self) -> Option<&TTestResult> {
        match self {
            TTestOutcome::Tested(r) => Some(r),
            _ => None,
        }
    }
}

/// Per-seed paired values of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub metric: String,
    pub real: Vec<f64>,
    pub synthetic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Inclusive linear interpolation on sorted data: position `p·(n-1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let m = mean(&s);
    Ok(Summary {
        n: s.len(),
        mean: m,
        sd: sample_sd(&s, m),
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// Summaries of the real and synthetic sides.
pub fn summarize_runs(series: &RunSeries) -> Result<(Summary, Summary)> {
    if series.real.len() != series.synthetic.len() {
        return Err(StatsError::LengthMismatch(series.real.len(), series.synthetic.len()));
    }
    Ok((summarize(&series.real)?, summarize(&series.synthetic)?))
}

/// `100 · (synthetic - real) / real`.
pub fn percent_change(real: f64, synthetic: f64) -> Result<f64> {
    if real == 0.0 {
        return Err(StatsError::ZeroReference);
    }
    Ok(100.0 * (synthetic - real) / real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Exact Γ at integers and half-integers.
    fn gamma_half(two_x: u32) -> f64 {
        let mut x = two_x as f64 / 2.0;
        let mut acc = 1.0;
        while x > 1.0 {
            x -= 1.0;
            acc *= x;
        }
        if two_x % 2 == 1 {
            acc * std::f64::consts::PI.sqrt()
        } else {
            acc
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = (a + b) / 2.0;
        let (lm, rm) = ((a + m) / 2.0, (m + b) / 2.0);
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }

    fn quadrature_p(t: f64, df: u32) -> f64 {
        let v = df as f64;
        let c = gamma_half(df + 1) / ((v * std::f64::consts::PI).sqrt() * gamma_half(df));
        let f = move |x: f64| c * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0);
        let b = t.abs();
        let (fa, fm, fb) = (f(0.0), f(b / 2.0), f(b));
        let whole = b / 6.0 * (fa + 4.0 * fm + fb);
        1.0 - 2.0 * simpson(&f, 0.0, b, fa, fm, fb, whole, 1e-13, 50)
    }

    #[test]
    fn p_values_match_quadrature() {
        for df in 1..=30 {
            for k in 0..=40 {
                let t = k as f64 * 0.25;
                let p = student_t_two_sided(t, df as f64);
                let q = quadrature_p(t, df);
                assert!((p - q).abs() < 1e-6, "df {df} t {t}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn critical_value_df9() {
        let z = [-1.5, -1.2, -0.7, -0.3, 0.0, 0.1, 0.4, 0.8, 1.1, 1.3];
        let zm = mean(&z);
        let zs = sample_sd(&z, zm);
        let c = 2.2622 / 10f64.sqrt();
        let a: Vec<f64> = z.iter().map(|v| c + (v - zm) / zs + 5.0).collect();
        let b = vec![5.0; 10];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t_statistic - 2.2622).abs() < 1e-9);
        assert_eq!(r.degrees_of_freedom, 9);
        assert!((r.p_value - 0.05).abs() < 1e-3);
    }

    #[test]
    fn t_test_degenerate_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(paired_t_test(&a, &a), Err(StatsError::ZeroVariance));
        assert_eq!(paired_t_test(&[1.0], &[2.0]), Err(StatsError::TooFewPairs(1)));
        let r = paired_t_test(&[1.0, -1.0, 2.0, -2.0], &[0.0; 4]).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert!(matches!(TTestOutcome::of(&a, &a).unwrap(), TTestOutcome::ZeroVariance { .. }));
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn summaries() {
        let s = summarize(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3, s.min, s.max), (3.0, 2.0, 4.0, 1.0, 5.0));
        let c = summarize(&[2.0; 6]).unwrap();
        assert_eq!((c.sd, c.q1, c.median, c.q3), (0.0, 2.0, 2.0, 2.0));
        assert_eq!(summarize(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn summary_matches_sort_oracle() {
        let mut r = crate::rng::stream(8);
        let v: Vec<f64> = (0..10).map(|_| crate::rng::unit(&mut r)).collect();
        let s = summarize(&v).unwrap();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        // n = 10: q1 at position 2.25, median at 4.5, q3 at 6.75.
        let q1 = sorted[2] + 0.25 * (sorted[3] - sorted[2]);
        let med = (sorted[4] + sorted[5]) / 2.0;
        let q3 = sorted[6] + 0.75 * (sorted[7] - sorted[6]);
        assert!((s.q1 - q1).abs() < 1e-15);
        assert!((s.median - med).abs() < 1e-15);
        assert!((s.q3 - q3).abs() < 1e-15);
        let m: f64 = v.iter().sum::<f64>() / 10.0;
        let var: f64 = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 9.0;
        assert!((s.sd - var.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn percent_change_table_values() {
        assert!((percent_change(65.04, 65.54).unwrap() - 0.78).abs() < 0.1);
        assert!((percent_change(9.89, 6.53).unwrap() - -34.02).abs() < 0.1);
        assert_eq!(percent_change(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(percent_change(0.0, 1.0), Err(StatsError::ZeroReference));
    }

    proptest! {
        #[test]
        fn t_test_symmetry_and_shift(
            pairs in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..30),
            shift in -100.0..100.0f64,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let Ok(ab) = paired_t_test(&a, &b) else { return Ok(()); };
            let ba = paired_t_test(&b, &a).unwrap();
            prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
            prop_assert_eq!(ab.p_value, ba.p_value);
            let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
            let shifted = paired_t_test(&a2, &b2).unwrap();
            prop_assert!((shifted.t_statistic - ab.t_statistic).abs() < 1e-6 * ab.t_statistic.abs().max(1.0));
            prop_assert!((shifted.p_value - ab.p_value).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }
}
