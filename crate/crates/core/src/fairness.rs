//! Per-group confusion rates and group-fairness metrics.
//!
//! All differences are taken in the order `group_a - group_b`, so a negative
//! equal opportunity difference means group a has the lower true positive rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ProtectedSpec;

/// Half-width of the fair band for the difference metrics, and the upper
/// bound for equalized odds.
pub const FAIR_BOUND: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FairnessError {
    #[error("{what}: expected {expected} values, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("group `{group}` has no {class} labels, its rates are undefined")]
    UndefinedRate { group: String, class: &'static str },
}

pub type Result<T, E = FairnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub group: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
}

impl GroupRates {
    /// Rates from counts; fails if the group lacks either label class.
    pub fn from_counts(group: &str, tp: u64, fp: u64, tn: u64, fn_: u64) -> Result<Self> {
        let undefined = |class| FairnessError::UndefinedRate {
            group: group.to_string(),
            class,
        };
        if tp + fn_ == 0 {
            return Err(undefined("positive"));
        }
        if fp + tn == 0 {
            return Err(undefined("negative"));
        }
        let pos = (tp + fn_) as f64;
        let neg = (fp + tn) as f64;
        Ok(GroupRates {
            group: group.to_string(),
            tp,
            fp,
            tn,
            fn_,
            tpr: tp as f64 / pos,
            fpr: fp as f64 / neg,
            tnr: tn as f64 / neg,
            fnr: fn_ as f64 / pos,
        })
    }

    pub fn size(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn counts(labels: &[u8], preds: &[u8], groups: &[&str], group: &str) -> [u64; 4] {
    let mut c = [0u64; 4];
    for ((&y, &p), &g) in labels.iter().zip(preds).zip(groups) {
        if g != group {
            continue;
        }
        let slot = match (y == 1, p == 1) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        c[slot] += 1;
    }
    c
}

/// Confusion counts and rates for the two groups of `spec`. Rows belonging to
/// other groups are ignored.
pub fn group_rates(
    labels: &[u8],
    preds: &[u8],
    groups: &[&str],
    spec: &ProtectedSpec,
) -> Result<(GroupRates, GroupRates)> {
    for (what, len) in [("predictions", preds.len()), ("groups", groups.len())] {
        if len != labels.len() {
            return Err(FairnessError::LengthMismatch {
                what,
                expected: labels.len(),
                found: len,
            });
        }
    }
    let rates = |g: &str| {
        let [tp, fp, tn, fn_] = counts(labels, preds, groups, g);
        GroupRates::from_counts(g, tp, fp, tn, fn_)
    };
    Ok((rates(&spec.group_a)?, rates(&spec.group_b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessScores {
    pub equal_opportunity_difference: f64,
    pub average_odds_difference: f64,
    pub equalized_odds: f64,
    pub group_a: String,
    pub group_b: String,
}

pub fn fairness_metrics(a: &GroupRates, b: &GroupRates) -> FairnessScores {
    let d_tpr = a.tpr - b.tpr;
    let d_fpr = a.fpr - b.fpr;
    FairnessScores {
        equal_opportunity_difference: d_tpr,
        average_odds_difference: (d_fpr + d_tpr) / 2.0,
        equalized_odds: d_fpr.abs().max(d_tpr.abs()),
        group_a: a.group.clone(),
        group_b: b.group.clone(),
    }
}

/// `group_rates` followed by `fairness_metrics`.
pub fn evaluate(labels: &[u8], preds: &[u8], groups: &[&str], spec: &ProtectedSpec) -> Result<FairnessScores> {
    let (a, b) = group_rates(labels, preds, groups, spec)?;
    Ok(fairness_metrics(&a, &b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Fair,
    /// Outside the band with a positive signed gap.
    UnfairTowardA,
    /// Outside the band with a negative signed gap (group a disadvantaged).
    UnfairTowardB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessBands {
    pub equal_opportunity_difference: Band,
    pub average_odds_difference: Band,
    pub equalized_odds: Band,
}

fn band(signed: f64, magnitude: f64) -> Band {
    if magnitude <= FAIR_BOUND {
        Band::Fair
    } else if signed > 0.0 {
        Band::UnfairTowardA
    } else {
        Band::UnfairTowardB
    }
}

/// Bands are inclusive. Equalized odds has no sign of its own; its direction
/// is the sign of whichever rate gap attains the maximum, which needs the
/// underlying rates, so here it is recovered from the two difference metrics
/// (`ΔFPR = 2·avg_odds - eq_opp`).
pub fn fairness_band(score: &FairnessScores) -> FairnessBands {
    let d_tpr = score.equal_opportunity_difference;
    let d_fpr = 2.0 * score.average_odds_difference - d_tpr;
    let eo_sign = if d_tpr.abs() >= d_fpr.abs() { d_tpr } else { d_fpr };
    FairnessBands {
        equal_opportunity_difference: band(d_tpr, d_tpr.abs()),
        average_odds_difference: band(score.average_odds_difference, score.average_odds_difference.abs()),
        equalized_odds: band(eo_sign, score.equalized_odds),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rates(group: &str, tpr: f64, fpr: f64) -> GroupRates {
        GroupRates {
            group: group.into(),
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
            tpr,
            fpr,
            tnr: 1.0 - fpr,
            fnr: 1.0 - tpr,
        }
    }

    fn spec() -> ProtectedSpec {
        ProtectedSpec::new("g", "a", "b")
    }

    #[test]
    fn hand_counted_rates() {
        let labels = [1, 1, 0, 1, 0];
        let preds = [1, 0, 0, 1, 1];
        let groups = ["a", "a", "a", "b", "b"];
        let (a, b) = group_rates(&labels, &preds, &groups, &spec()).unwrap();
        assert_eq!((a.tp, a.fp, a.tn, a.fn_), (1, 0, 1, 1));
        assert_eq!((a.tpr, a.fpr), (0.5, 0.0));
        assert_eq!((b.tpr, b.fpr), (1.0, 1.0));
        assert_eq!(a.size() + b.size(), 5);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [1, 0, 1, 0];
        let groups = ["a", "a", "b", "b"];
        let (a, b) = group_rates(&labels, &labels, &groups, &spec()).unwrap();
        for r in [a, b] {
            assert_eq!((r.tpr, r.fpr), (1.0, 0.0));
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let err = group_rates(&[0, 0, 1, 0], &[0, 0, 1, 0], &["a", "a", "b", "b"], &spec()).unwrap_err();
        assert_eq!(
            err,
            FairnessError::UndefinedRate {
                group: "a".into(),
                class: "positive"
            }
        );
    }

    #[test]
    fn substituted_example() {
        let s = fairness_metrics(&rates("a", 0.9, 0.2), &rates("b", 0.7, 0.3));
        assert!((s.equal_opportunity_difference - 0.2).abs() < 1e-12);
        assert!((s.average_odds_difference - 0.05).abs() < 1e-12);
        assert!((s.equalized_odds - 0.2).abs() < 1e-12);
        let t = fairness_metrics(&rates("b", 0.7, 0.3), &rates("a", 0.9, 0.2));
        assert!((t.equal_opportunity_difference + 0.2).abs() < 1e-12);
        assert!((t.average_odds_difference + 0.05).abs() < 1e-12);
        assert!((t.equalized_odds - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bands() {
        let mut s = fairness_metrics(&rates("a", 0.5, 0.5), &rates("b", 0.5, 0.5));
        let all_fair = FairnessBands {
            equal_opportunity_difference: Band::Fair,
            average_odds_difference: Band::Fair,
            equalized_odds: Band::Fair,
        };
        assert_eq!(fairness_band(&s), all_fair);
        s.equal_opportunity_difference = 0.05;
        assert_eq!(fairness_band(&s).equal_opportunity_difference, Band::Fair);
        s.equal_opportunity_difference = -0.25;
        assert_eq!(fairness_band(&s).equal_opportunity_difference, Band::UnfairTowardB);
        let s = fairness_metrics(&rates("a", 0.6, 0.3), &rates("b", 0.5, 0.3));
        assert_eq!(fairness_band(&s).equalized_odds, Band::Fair);
        let s = fairness_metrics(&rates("a", 0.5, 0.1), &rates("b", 0.45, 0.4));
        let b = fairness_band(&s);
        assert_eq!(b.equalized_odds, Band::UnfairTowardB);
        assert_eq!(b.equal_opportunity_difference, Band::Fair);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn metric_identities(ta in 0.0..=1.0f64, fa in 0.0..=1.0f64, tb in 0.0..=1.0f64, fb in 0.0..=1.0f64) {
            let s = fairness_metrics(&rates("a", ta, fa), &rates("b", tb, fb));
            let half_sum = ((fa - fb).abs() + (ta - tb).abs()) / 2.0;
            prop_assert!(s.equalized_odds >= half_sum);
            prop_assert!(half_sum >= s.average_odds_difference.abs() - 1e-15);
            prop_assert!(s.equalized_odds >= s.equal_opportunity_difference.abs());
            let t = fairness_metrics(&rates("b", tb, fb), &rates("a", ta, fa));
            prop_assert_eq!(t.equal_opportunity_difference, -s.equal_opportunity_difference);
            prop_assert_eq!(t.average_odds_difference, -s.average_odds_difference);
            prop_assert_eq!(t.equalized_odds, s.equalized_odds);
            let z = fairness_metrics(&rates("a", ta, fa), &rates("b", ta, fa));
            prop_assert_eq!((z.equal_opportunity_difference, z.average_odds_difference, z.equalized_odds), (0.0, 0.0, 0.0));
        }

        #[test]
        fn row_order_invariance(rows in proptest::collection::vec((0u8..2, 0u8..2, 0usize..2), 8..60), seed in any::<u64>()) {
            let mut rows = rows;
            rows.extend([(1, 0, 0), (0, 0, 0), (1, 1, 1), (0, 1, 1)]);
            let names = ["a", "b"];
            let split = |rows: &[(u8, u8, usize)]| {
                let labels: Vec<u8> = rows.iter().map(|r| r.0).collect();
                let preds: Vec<u8> = rows.iter().map(|r| r.1).collect();
                let groups: Vec<&str> = rows.iter().map(|r| names[r.2]).collect();
                evaluate(&labels, &preds, &groups, &spec()).unwrap()
            };
            let before = split(&rows);
            crate::rng::shuffle(&mut crate::rng::stream(seed), &mut rows);
            prop_assert_eq!(before, split(&rows));
        }
    }
}
