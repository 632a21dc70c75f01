//! Survival evaluation suite: concordance index, fixed-horizon AUC,
//! Kaplan-Meier estimator, median-risk stratification and the two-group
//! log-rank test.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalLabel;
use crate::error::{Error, Result};
use crate::special::chi_square_cdf;

/// Concordance index: the fraction of comparable pairs (event `i`, any `j`
/// with `t_j > t_i`) ranked consistently by risk. Risk ties count 0.5.
pub fn concordance_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    if risks.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} risks for {} labels",
            risks.len(),
            labels.len()
        )));
    }
    if risks.len() < 2 {
        return Err(Error::EmptyInput("need at least two patients"));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite { what: "risk score" });
    }
    let n = risks.len();
    let mut pairs = 0u64;
    let mut score = 0.0;
    for i in 0..n {
        if !labels[i].event {
            continue;
        }
        for j in 0..n {
            if labels[j].time_days > labels[i].time_days {
                pairs += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(score / pairs as f64)
}

/// Fixed-horizon binary AUC of risk predicting death by `horizon_tau`:
/// cases are events with `t <= tau`, controls everyone with `t > tau`;
/// patients censored at or before `tau` are excluded. Mann-Whitney form with
/// ties counting 0.5.
pub fn survival_auc(risks: &[f64], labels: &[SurvivalLabel], horizon_tau: f64) -> Result<f64> {
    if risks.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} risks for {} labels",
            risks.len(),
            labels.len()
        )));
    }
    if !horizon_tau.is_finite() || horizon_tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon_tau}"
        )));
    }
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for (r, l) in risks.iter().zip(labels) {
        if !r.is_finite() {
            return Err(Error::NonFinite { what: "risk score" });
        }
        if l.time_days > horizon_tau {
            controls.push(*r);
        } else if l.event {
            cases.push(*r);
        }
    }
    if cases.is_empty() || controls.is_empty() {
        return Err(Error::NoCasesOrControls {
            cases: cases.len(),
            controls: controls.len(),
        });
    }
    let mut score = 0.0;
    for c in &cases {
        for k in &controls {
            if c > k {
                score += 1.0;
            } else if c == k {
                score += 0.5;
            }
        }
    }
    Ok(score / (cases.len() as f64 * controls.len() as f64))
}

/// Kaplan-Meier curve on the grid of distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

/// Product-limit estimator. Censored patients leave the risk set after their
/// recorded time; tied events are processed against the full tied risk set.
pub fn kaplan_meier(labels: &[SurvivalLabel]) -> KMCurve {
    let mut sorted: Vec<&SurvivalLabel> = labels.iter().collect();
    sorted.sort_by(|a, b| a.time_days.partial_cmp(&b.time_days).expect("finite times"));

    let n = sorted.len();
    let mut curve = KMCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].time_days;
        let at_risk = n - i;
        let mut deaths = 0;
        while i < n && sorted[i].time_days == t {
            if sorted[i].event {
                deaths += 1;
            }
            i += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(deaths);
        }
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Low,
    High,
}

impl std::fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskGroup::Low => write!(f, "low"),
            RiskGroup::High => write!(f, "high"),
        }
    }
}

/// Split by the lower sample median (element at index ceil(n/2) - 1 of the
/// sorted risks): `high` strictly above the median, `low` at or below.
/// All-identical risks cannot be split and signal a degenerate model.
pub fn median_risk_split(risks: &[f64]) -> Result<Vec<RiskGroup>> {
    if risks.len() < 2 {
        return Err(Error::EmptyInput("need at least two risks to split"));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite { what: "risk score" });
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite risks"));
    let median = sorted[risks.len().div_ceil(2) - 1];
    let groups: Vec<RiskGroup> = risks
        .iter()
        .map(|&r| {
            if r > median {
                RiskGroup::High
            } else {
                RiskGroup::Low
            }
        })
        .collect();
    if !groups.contains(&RiskGroup::High) {
        return Err(Error::DegenerateRisks);
    }
    Ok(groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-group log-rank test. At each pooled event time the observed events in
/// group A are compared with their hypergeometric expectation; the squared
/// standardized sum is chi-square with one degree of freedom.
pub fn log_rank_test(
    labels_a: &[SurvivalLabel],
    labels_b: &[SurvivalLabel],
) -> Result<LogRankResult> {
    if labels_a.is_empty() || labels_b.is_empty() {
        return Err(Error::EmptyInput("both groups must be non-empty"));
    }
    let pooled_events = labels_a
        .iter()
        .chain(labels_b)
        .filter(|l| l.event)
        .count();
    if pooled_events == 0 {
        return Err(Error::EmptyInput("pooled groups contain no events"));
    }

    // (time, in_group_a, event), ascending by time.
    let mut all: Vec<(f64, bool, bool)> = labels_a
        .iter()
        .map(|l| (l.time_days, true, l.event))
        .chain(labels_b.iter().map(|l| (l.time_days, false, l.event)))
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite times"));

    let n_total = all.len();
    let mut n_a = labels_a.len() as f64;
    let mut n = n_total as f64;
    let mut observed_minus_expected = 0.0;
    let mut variance = 0.0;

    let mut i = 0;
    while i < n_total {
        let t = all[i].0;
        let mut deaths = 0.0;
        let mut deaths_a = 0.0;
        let mut leaving = 0.0;
        let mut leaving_a = 0.0;
        while i < n_total && all[i].0 == t {
            leaving += 1.0;
            if all[i].1 {
                leaving_a += 1.0;
            }
            if all[i].2 {
                deaths += 1.0;
                if all[i].1 {
                    deaths_a += 1.0;
                }
            }
            i += 1;
        }
        if deaths > 0.0 && n > 0.0 {
            let expected_a = deaths * n_a / n;
            observed_minus_expected += deaths_a - expected_a;
            if n > 1.0 {
                variance +=
                    deaths * (n_a / n) * (1.0 - n_a / n) * (n - deaths) / (n - 1.0);
            }
        }
        n -= leaving;
        n_a -= leaving_a;
    }

    if variance <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let statistic = observed_minus_expected * observed_minus_expected / variance;
    let p_value = 1.0 - chi_square_cdf(1.0, statistic);
    Ok(LogRankResult { statistic, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn label(time: f64, event: bool) -> SurvivalLabel {
        SurvivalLabel {
            time_days: time,
            event,
        }
    }

    /// Exhaustive pair enumeration straight from the definition.
    fn c_index_oracle(risks: &[f64], labels: &[SurvivalLabel]) -> Option<f64> {
        let mut pairs = 0u64;
        let mut score = 0.0;
        for i in 0..risks.len() {
            if !labels[i].event {
                continue;
            }
            for j in 0..risks.len() {
                if labels[j].time_days > labels[i].time_days {
                    pairs += 1;
                    score += if risks[i] > risks[j] {
                        1.0
                    } else if risks[i] == risks[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        (pairs > 0).then(|| score / pairs as f64)
    }

    #[test]
    fn perfect_and_reversed_rankings() {
        let labels: Vec<SurvivalLabel> = (1..=5).map(|t| label(t as f64, true)).collect();
        let decreasing: Vec<f64> = (0..5).map(|i| 5.0 - i as f64).collect();
        let increasing: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert_eq!(concordance_index(&decreasing, &labels).unwrap(), 1.0);
        assert_eq!(concordance_index(&increasing, &labels).unwrap(), 0.0);
    }

    #[test]
    fn mixed_censoring_matches_oracle() {
        let risks = [2.0, 1.0, 3.0, 0.5, 2.5, 1.5];
        let labels = [
            label(10.0, true),
            label(20.0, false),
            label(5.0, true),
            label(30.0, true),
            label(8.0, false),
            label(25.0, true),
        ];
        let expected = c_index_oracle(&risks, &labels).unwrap();
        assert_abs_diff_eq!(
            concordance_index(&risks, &labels).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn c_index_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let risks: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<SurvivalLabel> = (0..12)
            .map(|_| label(rng.gen_range(1.0..50.0), rng.gen_bool(0.7)))
            .collect();
        let base = concordance_index(&risks, &labels).unwrap();
        let affine: Vec<f64> = risks.iter().map(|r| 2.0 * r + 3.0).collect();
        let expo: Vec<f64> = risks.iter().map(|r| r.exp()).collect();
        assert_eq!(concordance_index(&affine, &labels).unwrap(), base);
        assert_eq!(concordance_index(&expo, &labels).unwrap(), base);
    }

    #[test]
    fn c_index_direction_complement() {
        // All events, no risk ties: c(f) + c(-f) = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let risks: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<SurvivalLabel> = (0..10)
            .map(|i| label((i + 1) as f64 * 3.0, true))
            .collect();
        let forward = concordance_index(&risks, &labels).unwrap();
        let negated: Vec<f64> = risks.iter().map(|r| -r).collect();
        let backward = concordance_index(&negated, &labels).unwrap();
        assert_abs_diff_eq!(forward + backward, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_risks_center_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut total = 0.0;
        let mut count = 0;
        for _ in 0..1000 {
            let n = rng.gen_range(5..15);
            let risks: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let labels: Vec<SurvivalLabel> = (0..n)
                .map(|_| label(rng.gen_range(1.0..100.0), rng.gen_bool(0.7)))
                .collect();
            if let Ok(c) = concordance_index(&risks, &labels) {
                total += c;
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn auc_extremes_and_ties() {
        let labels = [
            label(1.0, true),
            label(2.0, true),
            label(20.0, false),
            label(30.0, true),
        ];
        // Cases (t <= 10, event): risks 5, 4; controls (t > 10): 1, 2.
        assert_eq!(
            survival_auc(&[5.0, 4.0, 1.0, 2.0], &labels, 10.0).unwrap(),
            1.0
        );
        assert_eq!(
            survival_auc(&[1.0, 1.0, 1.0, 1.0], &labels, 10.0).unwrap(),
            0.5
        );
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let risks = [0.9, 0.3, 0.5, 0.5, 0.8, 0.1, 0.7, 0.2];
        let labels = [
            label(2.0, true),   // case
            label(4.0, false),  // censored before tau: excluded
            label(6.0, true),   // case
            label(9.0, true),   // case
            label(12.0, false), // control
            label(15.0, true),  // control
            label(20.0, false), // control
            label(25.0, true),  // control
        ];
        let tau = 10.0;
        let cases = [0.9, 0.5, 0.5];
        let controls = [0.8, 0.1, 0.7, 0.2];
        let mut score = 0.0;
        for c in cases {
            for k in controls {
                score += if c > k {
                    1.0
                } else if c == k {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let expected = score / 12.0;
        assert_abs_diff_eq!(
            survival_auc(&risks, &labels, tau).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn auc_needs_cases_and_controls() {
        let labels = [label(1.0, false), label(2.0, false)];
        assert!(matches!(
            survival_auc(&[0.1, 0.2], &labels, 10.0),
            Err(Error::NoCasesOrControls { .. })
        ));
    }

    #[test]
    fn km_all_events() {
        let labels = [label(1.0, true), label(2.0, true), label(3.0, true)];
        let curve = kaplan_meier(&labels);
        assert_eq!(curve.times, vec![1.0, 2.0, 3.0]);
        let expected = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (s, e) in curve.survival.iter().zip(expected) {
            assert_abs_diff_eq!(*s, e, epsilon = 1e-12);
        }
        assert_eq!(curve.at_risk, vec![3, 2, 1]);
    }

    #[test]
    fn km_with_censoring_shrinks_risk_set() {
        // Times 1, 2+ (censored), 3: the censored patient leaves the risk
        // set after t = 2, so the last event sees a risk set of one and the
        // curve steps 2/3 then 0.
        let labels = [label(1.0, true), label(2.0, false), label(3.0, true)];
        let curve = kaplan_meier(&labels);
        assert_eq!(curve.times, vec![1.0, 3.0]);
        assert_eq!(curve.at_risk, vec![3, 1]);
        assert_abs_diff_eq!(curve.survival[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(curve.survival[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn km_no_events_is_empty_grid() {
        let labels = [label(1.0, false), label(2.0, false)];
        let curve = kaplan_meier(&labels);
        assert!(curve.times.is_empty());
        assert!(curve.survival.is_empty());
    }

    #[test]
    fn km_product_limit_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let n = rng.gen_range(2..40);
            let labels: Vec<SurvivalLabel> = (0..n)
                .map(|_| label(rng.gen_range(1..15) as f64, rng.gen_bool(0.6)))
                .collect();
            let curve = kaplan_meier(&labels);
            let mut product = 1.0;
            for ((s, &d), &r) in curve
                .survival
                .iter()
                .zip(&curve.events)
                .zip(&curve.at_risk)
            {
                product *= 1.0 - d as f64 / r as f64;
                assert_abs_diff_eq!(*s, product, epsilon = 1e-12);
            }
            for pair in curve.survival.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12);
            }
        }
    }

    #[test]
    fn median_split_examples() {
        let groups = median_risk_split(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            groups,
            vec![
                RiskGroup::Low,
                RiskGroup::Low,
                RiskGroup::High,
                RiskGroup::High
            ]
        );
        let groups = median_risk_split(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            groups,
            vec![RiskGroup::Low, RiskGroup::Low, RiskGroup::High]
        );
        assert!(matches!(
            median_risk_split(&[2.0, 2.0, 2.0]),
            Err(Error::DegenerateRisks)
        ));
    }

    #[test]
    fn log_rank_identical_groups_is_null() {
        let group: Vec<SurvivalLabel> = (1..=8)
            .map(|t| label(t as f64, t % 3 != 0))
            .collect();
        let result = log_rank_test(&group, &group).unwrap();
        assert_abs_diff_eq!(result.statistic, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(result.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_rank_separated_groups_significant() {
        // Hand tabulation: group A dies at 1, 2, 3 while all of group B
        // (times 10, 11, 12) is still at risk.
        // t=1: n=6, nA=3, E=0.5, V=0.5*0.5*5/5=0.25
        // t=2: n=5, nA=2, E=0.4, V=0.4*0.6*4/4=0.24
        // t=3: n=4, nA=1, E=0.25, V=0.25*0.75*3/3=0.1875
        // O-E sum = 3 - 1.15 = 1.85; Var = 0.6775; stat = 1.85^2/0.6775.
        let a: Vec<SurvivalLabel> = [1.0, 2.0, 3.0].iter().map(|&t| label(t, true)).collect();
        let b: Vec<SurvivalLabel> = [10.0, 11.0, 12.0]
            .iter()
            .map(|&t| label(t, true))
            .collect();
        let result = log_rank_test(&a, &b).unwrap();
        let expected = 1.85f64 * 1.85 / 0.6775;
        assert_abs_diff_eq!(result.statistic, expected, epsilon = 1e-10);
        assert!(result.p_value < 0.05);
    }

    #[test]
    fn log_rank_symmetric_in_group_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<SurvivalLabel> = (0..10)
            .map(|_| label(rng.gen_range(1.0..30.0), rng.gen_bool(0.7)))
            .collect();
        let b: Vec<SurvivalLabel> = (0..12)
            .map(|_| label(rng.gen_range(1.0..30.0), rng.gen_bool(0.7)))
            .collect();
        let ab = log_rank_test(&a, &b).unwrap();
        let ba = log_rank_test(&b, &a).unwrap();
        assert_abs_diff_eq!(ab.statistic, ba.statistic, epsilon = 1e-10);
        assert_abs_diff_eq!(ab.p_value, ba.p_value, epsilon = 1e-10);
    }

    #[test]
    fn log_rank_chi_square_spot_value() {
        // statistic 3.841 sits at the 5% tail of chi-square with 1 df.
        let p = 1.0 - chi_square_cdf(1.0, 3.841);
        assert_abs_diff_eq!(p, 0.0500, epsilon = 5e-4);
    }

    #[test]
    fn log_rank_rejects_degenerate_inputs() {
        let a = [label(1.0, true)];
        assert!(matches!(
            log_rank_test(&a, &[]),
            Err(Error::EmptyInput(_))
        ));
        let censored = [label(1.0, false), label(2.0, false)];
        assert!(matches!(
            log_rank_test(&censored, &censored),
            Err(Error::EmptyInput(_))
        ));
    }
}
