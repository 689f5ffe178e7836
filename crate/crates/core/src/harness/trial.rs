use super::Estimator;
use crate::baselines;
use crate::bmp::{HyperEstimate, PriorMoments};
use crate::em;
use crate::metrics::{self, TrialMetrics};
use crate::model::Scenario;
use crate::{Error, Result, C64};

/// Metrics of each estimator on one scenario, in the order given.
///
/// LMMSE uses the prior the receiver starts from (average fading, zero
/// phase); GA-MMSE and the oracle are handed the true impairments.
pub fn evaluate(scenario: &Scenario, estimators: &[Estimator]) -> Result<Vec<TrialMetrics>> {
    estimators
        .iter()
        .map(|&e| evaluate_one(scenario, e))
        .collect()
}

fn evaluate_one(sc: &Scenario, estimator: Estimator) -> Result<TrialMetrics> {
    let cfg = &sc.config;
    let truth = &sc.realization;
    let y = &sc.received;
    let noise_var = cfg.noise_var();
    let masked = truth.masked_channel();
    let nmse_of = |x: &[C64]| {
        metrics::nmse(x, &masked)
            .ok_or_else(|| Error::invalid("activity", "trial has no active device"))
    };
    let with_activity = |nmse: f64, a_hat: &[bool]| {
        let (missed, false_alarm) = metrics::uad_breakdown(a_hat, &truth.activity);
        TrialMetrics {
            nmse,
            uad_error_rate: Some(metrics::uad_error_rate(a_hat, &truth.activity)),
            missed_rate: Some(missed),
            false_alarm_rate: Some(false_alarm),
            hyper_mse: None,
            iterations_to_converge: None,
            nmse_trace: Vec::new(),
        }
    };
    let estimate_only = |nmse: f64| TrialMetrics {
        nmse,
        uad_error_rate: None,
        missed_rate: None,
        false_alarm_rate: None,
        hyper_mse: None,
        iterations_to_converge: None,
        nmse_trace: Vec::new(),
    };

    Ok(match estimator {
        Estimator::Brmpem => {
            let r = em::run_traced(
                y,
                &sc.pilots,
                cfg,
                &sc.profiles,
                &cfg.impairment,
                Some(truth),
            )?;
            let trace = r.trace.nmse_series().unwrap_or_default();
            let hyper = truth
                .impairments
                .iter()
                .zip(&r.hyper_hat)
                .map(|(t, h)| metrics::hyper_mse(t, h))
                .sum::<f64>()
                / truth.impairments.len() as f64;
            let mut m = with_activity(nmse_of(&r.h_hat)?, &r.active_hat);
            m.hyper_mse = Some(hyper);
            m.iterations_to_converge = Some(metrics::iterations_to_converge(&trace));
            m.nmse_trace = trace;
            m
        }
        Estimator::Ls => estimate_only(nmse_of(&baselines::ls_estimate(y, &sc.pilots)?)?),
        Estimator::Lmmse => {
            let hyper = vec![HyperEstimate::initial(&cfg.impairment); cfg.groups];
            let priors = PriorMoments::from_hyper(&sc.profiles, &hyper, cfg.em_variant);
            estimate_only(nmse_of(&baselines::lmmse_estimate(
                y, &sc.pilots, &priors, cfg.p_a, noise_var,
            )?)?)
        }
        Estimator::Omp => {
            let count = truth.active_count().min(cfg.l);
            let (support, x) = baselines::omp_estimate(y, &sc.pilots, count)?;
            let mut a_hat = vec![false; cfg.k];
            for k in support {
                a_hat[k] = true;
            }
            with_activity(nmse_of(&x)?, &a_hat)
        }
        Estimator::Gammse => {
            let x = baselines::gammse_estimate(
                y,
                &sc.pilots,
                &truth.activity,
                &truth.impairments,
                &sc.profiles,
                noise_var,
                cfg.em_variant,
            )?;
            estimate_only(nmse_of(&x)?)
        }
        Estimator::Oracle => {
            let priors =
                PriorMoments::from_impairments(&sc.profiles, &truth.impairments, cfg.em_variant);
            let post =
                baselines::exact_posterior_oracle(y, &sc.pilots, &priors, cfg.p_a, noise_var)?;
            with_activity(nmse_of(&post.mmse_estimate)?, &post.map_support)
        }
    })
}
