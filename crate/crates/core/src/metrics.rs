//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::bmp::HyperEstimate;
use crate::model::Impairment;
use crate::C64;

/// Relative NMSE change below which an iteration counts as settled.
pub const CONVERGENCE_TOLERANCE: f64 = 0.01;

/// Metrics of one estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub nmse: f64,
    pub uad_error_rate: Option<f64>,
    pub missed_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    /// `|h_r e^{j phi} - h_r_hat e^{j phi_hat}|^2`, averaged over groups.
    pub hyper_mse: Option<f64>,
    pub iterations_to_converge: Option<usize>,
    /// NMSE after each inner iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nmse_trace: Vec<f64>,
}

/// `||x_hat - x||^2 / ||x||^2` for masked channel vectors; `None` when the
/// truth is all zero.
pub fn nmse(estimate: &[C64], truth: &[C64]) -> Option<f64> {
    assert_eq!(estimate.len(), truth.len(), "nmse: length mismatch");
    let den: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    if den == 0.0 {
        return None;
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).norm_sqr())
        .sum();
    Some(num / den)
}

pub fn uad_errors(a_hat: &[bool], a: &[bool]) -> usize {
    assert_eq!(a_hat.len(), a.len(), "uad_errors: length mismatch");
    a_hat.iter().zip(a).filter(|(x, y)| x != y).count()
}

/// Hamming distance over `K`; misses and false alarms combined.
pub fn uad_error_rate(a_hat: &[bool], a: &[bool]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    uad_errors(a_hat, a) as f64 / a.len() as f64
}

/// Misses and false alarms as separate fractions of `K`.
pub fn uad_breakdown(a_hat: &[bool], a: &[bool]) -> (f64, f64) {
    assert_eq!(a_hat.len(), a.len(), "uad_breakdown: length mismatch");
    let k = a.len().max(1) as f64;
    let missed = a_hat.iter().zip(a).filter(|(x, y)| !**x && **y).count();
    let false_alarm = a_hat.iter().zip(a).filter(|(x, y)| **x && !**y).count();
    (missed as f64 / k, false_alarm as f64 / k)
}

pub fn hyper_mse(truth: &Impairment, est: &HyperEstimate) -> f64 {
    (truth.gain() - est.gain()).norm_sqr()
}

/// Mean activity error rate strictly below `1/K`.
pub fn successful_recovery(error_rates: &[f64], k: usize) -> bool {
    if error_rates.is_empty() {
        return false;
    }
    let mean = error_rates.iter().sum::<f64>() / error_rates.len() as f64;
    mean < 1.0 / k as f64
}

/// First 1-based iteration after which every further step changes the NMSE
/// by less than [`CONVERGENCE_TOLERANCE`] relatively. An empty trace gives 0.
pub fn iterations_to_converge(nmse_trace: &[f64]) -> usize {
    let settled = |prev: f64, cur: f64| {
        if prev == 0.0 {
            cur == 0.0
        } else {
            ((cur - prev) / prev).abs() < CONVERGENCE_TOLERANCE
        }
    };
    let mut converged_at = nmse_trace.len();
    for i in (1..nmse_trace.len()).rev() {
        if settled(nmse_trace[i - 1], nmse_trace[i]) {
            converged_at = i;
        } else {
            break;
        }
    }
    converged_at
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1`); zero for fewer than two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
