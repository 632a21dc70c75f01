//! Cox negative log partial likelihood over risk scores, with its analytic
//! gradient. Ties are handled with the Breslow convention: the risk set of an
//! event at time t is everyone with observed time >= t.

use crate::data::SurvivalLabel;
use crate::error::{Error, Result};

fn check_inputs(risks: &[f64], labels: &[SurvivalLabel]) -> Result<()> {
    if risks.is_empty() {
        return Err(Error::EmptyInput("risk vector"));
    }
    if risks.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} risks for {} labels",
            risks.len(),
            labels.len()
        )));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite { what: "risk score" });
    }
    Ok(())
}

/// Indices sorted by observed time, descending, so a single forward sweep
/// grows the risk set.
fn descending_by_time(labels: &[SurvivalLabel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        labels[b]
            .time_days
            .partial_cmp(&labels[a].time_days)
            .expect("times are finite")
            .then(a.cmp(&b))
    });
    order
}

/// Negative log partial likelihood, summed over events:
/// `sum_{i: event} ( -o_i + log sum_{j: t_j >= t_i} exp(o_j) )`.
pub fn cox_loss(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    check_inputs(risks, labels)?;
    let order = descending_by_time(labels);
    let max_risk = risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut loss = 0.0;
    let mut denom = 0.0; // sum of exp(o - max) over the current risk set
    let mut pos = 0;
    while pos < order.len() {
        // Admit the whole tie group before scoring its events, so ties stay
        // inside each other's risk sets.
        let time = labels[order[pos]].time_days;
        let group_start = pos;
        while pos < order.len() && labels[order[pos]].time_days == time {
            denom += (risks[order[pos]] - max_risk).exp();
            pos += 1;
        }
        for &idx in &order[group_start..pos] {
            if labels[idx].event {
                loss += -risks[idx] + max_risk + denom.ln();
            }
        }
    }
    Ok(loss)
}

/// Analytic gradient of [`cox_loss`] with respect to each risk score:
/// `dL/do_j = -delta_j + exp(o_j) * sum_{i: event, t_j >= t_i} 1 / D_i`.
pub fn cox_loss_gradient(risks: &[f64], labels: &[SurvivalLabel]) -> Result<Vec<f64>> {
    check_inputs(risks, labels)?;
    let n = risks.len();
    let order = descending_by_time(labels);
    let max_risk = risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Pass 1 (descending): denominator of each event's softmax term,
    // relative to the global max.
    let mut denom = 0.0;
    let mut event_terms: Vec<(f64, f64)> = Vec::new(); // (event time, 1/denom)
    let mut pos = 0;
    while pos < order.len() {
        let time = labels[order[pos]].time_days;
        let group_start = pos;
        while pos < order.len() && labels[order[pos]].time_days == time {
            denom += (risks[order[pos]] - max_risk).exp();
            pos += 1;
        }
        for &idx in &order[group_start..pos] {
            if labels[idx].event {
                event_terms.push((time, 1.0 / denom));
            }
        }
    }

    // Pass 2 (ascending): prefix sums of 1/D_i over events with t_i <= t_j.
    event_terms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("times are finite"));
    let mut prefix = Vec::with_capacity(event_terms.len());
    let mut acc = 0.0;
    for &(_, inv) in &event_terms {
        acc += inv;
        prefix.push(acc);
    }
    let cum_inverse = |t: f64| -> f64 {
        // Prefix over events with time <= t.
        let count = event_terms.partition_point(|probe| probe.0 <= t);
        if count == 0 {
            0.0
        } else {
            prefix[count - 1]
        }
    };

    let mut grad = vec![0.0; n];
    for j in 0..n {
        let delta = if labels[j].event { 1.0 } else { 0.0 };
        grad[j] = -delta + (risks[j] - max_risk).exp() * cum_inverse(labels[j].time_days);
    }
    Ok(grad)
}
