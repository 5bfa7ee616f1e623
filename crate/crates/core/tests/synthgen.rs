mod common;

use fairsynth::dataset::{prevalence_rates, ColumnData, Table};
use fairsynth::synthgen::{fit_generator, generate, make_planted_bias, nn_adversarial_accuracy, PlantedBiasSpec};
use proptest::prelude::*;

fn spec() -> PlantedBiasSpec {
    PlantedBiasSpec {
        group_a: "a".into(),
        group_b: "b".into(),
        prevalence_a: 0.4,
        positive_rate_a: 0.6,
        positive_rate_b: 0.3,
        signal_a: 1.0,
        signal_b: 1.0,
        noise_features: 2,
    }
}

fn numeric<'a>(t: &'a Table, name: &str) -> &'a [f64] {
    match &t.column(name).unwrap().data {
        ColumnData::Numeric(v) => v,
        ColumnData::Categorical { .. } => panic!("{name} is categorical"),
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let ((mx, sx), (my, sy)) = (mean_sd(x), mean_sd(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / ((x.len() as f64 - 1.0) * sx * sy)
}

fn normal_pdf(x: f64, m: f64) -> f64 {
    (-(x - m).powi(2) / 2.0).exp()
}

/// Monte-Carlo check of the analytic rates: classify each row with its exact
/// posterior against the overall positive rate and measure the gap.
#[test]
fn planted_gap_matches_bayes_classifier() {
    let s = spec().with_target_tpr_gap(0.2).unwrap();
    let t = make_planted_bias(&s, 200_000, 5).unwrap();
    let x = numeric(&t, "signal");
    let y = t.labels();
    let g = t.groups();
    let pi = s.prevalence();
    let mut tp = [0.0; 2];
    let mut pos = [0.0; 2];
    for i in 0..x.len() {
        let (k, prior, m) = if g[i] == "a" { (0, s.positive_rate_a, s.signal_a) } else { (1, s.positive_rate_b, s.signal_b) };
        let num = prior * normal_pdf(x[i], m);
        let posterior = num / (num + (1.0 - prior) * normal_pdf(x[i], -m));
        if y[i] == 1 {
            pos[k] += 1.0;
            tp[k] += f64::from(u8::from(posterior >= pi));
        }
    }
    let gap = tp[0] / pos[0] - tp[1] / pos[1];
    assert!((gap - 0.2).abs() < 0.01, "empirical gap {gap}");
    let (ra, rb) = s.optimal_rates();
    assert!((ra.tpr - tp[0] / pos[0]).abs() < 0.01 && (rb.tpr - tp[1] / pos[1]).abs() < 0.01);
    let shares = prevalence_rates(&t, "group").unwrap();
    assert!((shares["a"] - 40.0).abs() < 0.5);
}

#[test]
fn infeasible_gap_is_rejected() {
    assert!(spec().with_target_tpr_gap(0.99).is_err());
    let mut bad = spec();
    bad.positive_rate_a = 1.0;
    assert!(make_planted_bias(&bad, 10, 1).is_err());
}

#[test]
fn generator_preserves_marginals_and_dependence() {
    let s = spec().with_target_tpr_gap(0.2).unwrap();
    let train = make_planted_bias(&s, 4000, 8).unwrap();
    let g = fit_generator(&train, true, 3).unwrap();
    let synth = generate(&g, 20_000, 4).unwrap();
    assert_eq!(synth.column_names(), train.column_names());
    assert_eq!(synth.n_rows(), 20_000);
    for name in ["signal", "noise_1", "noise_2"] {
        let ((mr, sr), (ms, ss)) = (mean_sd(numeric(&train, name)), mean_sd(numeric(&synth, name)));
        assert!((mr - ms).abs() < 0.05 && (sr - ss).abs() < 0.05, "{name}: {mr} {sr} vs {ms} {ss}");
    }
    let (pr, ps) = (prevalence_rates(&train, "group").unwrap(), prevalence_rates(&synth, "group").unwrap());
    assert!((pr["a"] - ps["a"]).abs() < 1.5);
    let rl = |t: &Table| corr(numeric(t, "signal"), numeric(t, "label"));
    let (cr, cs) = (rl(&train), rl(&synth));
    assert!(cs > 0.5 * cr && cr > 0.3, "signal-label correlation {cr} vs {cs}");

    let independent = generate(&fit_generator(&train, false, 3).unwrap(), 20_000, 4).unwrap();
    assert!(rl(&independent).abs() < 0.05);
    assert_eq!(generate(&g, 500, 9).unwrap(), generate(&g, 500, 9).unwrap());
}

#[test]
fn generated_values_stay_in_the_training_support() {
    let train = make_planted_bias(&spec(), 300, 2).unwrap();
    let synth = generate(&fit_generator(&train, true, 1).unwrap(), 2000, 2).unwrap();
    let x = numeric(&train, "signal");
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(numeric(&synth, "signal").iter().all(|v| (lo..=hi).contains(v)));
    assert!(numeric(&synth, "label").iter().all(|&v| v == 0.0 || v == 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nnaa_is_a_bounded_symmetric_score(seed in 0u64..1000, n in 5usize..80) {
        let a = make_planted_bias(&spec(), n, seed).unwrap();
        let b = make_planted_bias(&spec(), n + 7, seed + 1).unwrap();
        let v = nn_adversarial_accuracy(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, nn_adversarial_accuracy(&b, &a).unwrap());
        prop_assert_eq!(nn_adversarial_accuracy(&a, &a).unwrap(), 0.0);
    }
}
