//! Outer EM iterations and the full BR-MP-EM driver.
//!
//! After each round of inner iterations, devices that are detected active and
//! whose channel estimate has settled (`delta_k < eta_th`) form the EM set.
//! Their posterior moments give
//!
//! ```text
//! M = < mu_dec_k h_los_k e^{-j phi_los_k} / v_ray_k >
//! N = < (v_dec_k + |mu_dec_k|^2) / v_ray_k >
//! ```
//!
//! and the Q-function is maximised in closed form by `phi = arg M` and the
//! positive root of `h^2 + h |M| - N = 0`. The other stationary point
//! (`arg M + pi` with the negative root flipped) points the LoS phase the
//! wrong way and is never returned.
//!
//! With `G` impairment groups the statistics and the update run separately per
//! group.

use serde::{Deserialize, Serialize};

use crate::bmp::{
    self, DecisionState, HyperEstimate, InnerOptions, MessageState, Observation, PriorMoments,
};
use crate::metrics;
use crate::model::{
    ChannelRealization, DeviceProfile, EmVariant, ImpairmentPrior, PilotMatrix, ScenarioConfig,
};
use crate::{Error, Result, C64};

/// Sufficient statistics of one group's EM update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmStatistics {
    pub m_stat: C64,
    pub n_stat: f64,
    pub set_size: usize,
}

/// One inner iteration as seen by the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based outer iteration.
    pub outer: usize,
    /// 1-based inner iteration within `outer`.
    pub inner: usize,
    /// 1-based running iteration count.
    pub total: usize,
    /// NMSE against the ground truth, when one was supplied.
    pub nmse: Option<f64>,
    /// Activity errors against the ground truth, when one was supplied.
    pub uad_errors: Option<usize>,
    /// Mean of the finite `delta_k`.
    pub mean_delta: f64,
}

/// State after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// Per-group estimates after this iteration's EM update.
    pub hyper: Vec<HyperEstimate>,
    /// Per-group EM-set sizes.
    pub em_set_sizes: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub outer: Vec<OuterRecord>,
}

impl RunTrace {
    /// Every inner iteration in order.
    pub fn iterations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.outer.iter().flat_map(|o| o.iterations.iter())
    }

    /// NMSE per total iteration (requires a ground-truth run).
    pub fn nmse_series(&self) -> Option<Vec<f64>> {
        self.iterations().map(|r| r.nmse).collect()
    }

    /// True when no outer iteration had a nonempty EM set.
    pub fn em_never_updated(&self) -> bool {
        self.outer
            .iter()
            .all(|o| o.em_set_sizes.iter().all(|&s| s == 0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub active_hat: Vec<bool>,
    /// `alpha_hat_k mu_dec_k`; zero for devices detected inactive.
    pub h_hat: Vec<C64>,
    pub hyper_hat: Vec<HyperEstimate>,
    pub trace: RunTrace,
}

/// Devices eligible for the EM update, split by group.
pub fn select_em_set(
    decision: &DecisionState,
    profiles: &[DeviceProfile],
    eta_th: f64,
    groups: usize,
) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); groups];
    for (k, p) in profiles.iter().enumerate() {
        if decision.llr_dec[k] > 0.0 && decision.delta_k[k] < eta_th {
            sets[p.group].push(k);
        }
    }
    sets
}

/// `M`, `N` and `|K+|` over `set`; `None` for an empty set.
pub fn em_statistics(
    decision: &DecisionState,
    profiles: &[DeviceProfile],
    set: &[usize],
) -> Option<EmStatistics> {
    if set.is_empty() {
        return None;
    }
    let (m, n) = set.iter().fold((C64::new(0.0, 0.0), 0.0), |(m, n), &k| {
        let p = &profiles[k];
        let mu = decision.mu_dec[k];
        (
            m + mu * p.los().conj() / p.v_ray,
            n + (decision.v_dec[k] + mu.norm_sqr()) / p.v_ray,
        )
    });
    let size = set.len() as f64;
    Some(EmStatistics {
        m_stat: m / size,
        n_stat: n / size,
        set_size: set.len(),
    })
}

/// Closed-form maximiser for both-components impairments.
///
/// The root is evaluated as `2N / (|M| + sqrt(|M|^2 + 4N))`, algebraically
/// equal to `(-|M| + sqrt(|M|^2 + 4N)) / 2` without the cancellation.
pub fn hyper_from_statistics(stats: &EmStatistics) -> Option<HyperEstimate> {
    let m = stats.m_stat.norm();
    let n = stats.n_stat;
    let h_r_hat = 2.0 * n / (m + (m * m + 4.0 * n).sqrt());
    (h_r_hat > 0.0 && h_r_hat.is_finite()).then(|| HyperEstimate {
        h_r_hat,
        phi_delta_hat: stats.m_stat.arg(),
    })
}

/// EM update over `set` (impairment on both channel components). `None` means
/// no update: the caller keeps its previous estimate.
pub fn em_update(
    decision: &DecisionState,
    profiles: &[DeviceProfile],
    set: &[usize],
) -> Option<HyperEstimate> {
    em_statistics(decision, profiles, set).and_then(|s| hyper_from_statistics(&s))
}

/// EM update when only the LoS component is impaired:
/// `c = M / < h_los^2 / v_ray >`. Posterior variances do not enter.
pub fn em_update_los_only(
    decision: &DecisionState,
    profiles: &[DeviceProfile],
    set: &[usize],
) -> Option<HyperEstimate> {
    let stats = em_statistics(decision, profiles, set)?;
    let weight = set
        .iter()
        .map(|&k| profiles[k].h_los * profiles[k].h_los / profiles[k].v_ray)
        .sum::<f64>()
        / set.len() as f64;
    let h_r_hat = stats.m_stat.norm() / weight;
    (h_r_hat > 0.0 && h_r_hat.is_finite()).then(|| HyperEstimate {
        h_r_hat,
        phi_delta_hat: stats.m_stat.arg(),
    })
}

/// BR-MP-EM on one received vector.
pub fn run(
    y: &[C64],
    pilots: &PilotMatrix,
    cfg: &ScenarioConfig,
    profiles: &[DeviceProfile],
    prior: &ImpairmentPrior,
) -> Result<EstimationResult> {
    run_traced(y, pilots, cfg, profiles, prior, None)
}

/// [`run`] with per-iteration NMSE / activity-error rows against `truth`.
pub fn run_traced(
    y: &[C64],
    pilots: &PilotMatrix,
    cfg: &ScenarioConfig,
    profiles: &[DeviceProfile],
    prior: &ImpairmentPrior,
    truth: Option<&ChannelRealization>,
) -> Result<EstimationResult> {
    if profiles.len() != pilots.devices() {
        return Err(Error::DimensionMismatch(format!(
            "{} profiles for {} pilot columns",
            profiles.len(),
            pilots.devices()
        )));
    }
    if let Some(t) = truth {
        if t.channel.len() != profiles.len() {
            return Err(Error::DimensionMismatch("ground truth length".into()));
        }
    }
    if let Some(p) = profiles.iter().find(|p| p.group >= cfg.groups) {
        return Err(Error::invalid(
            "group",
            format!(
                "device in group {} but only {} groups configured",
                p.group, cfg.groups
            ),
        ));
    }
    if !(cfg.p_a > 0.0 && cfg.p_a < 1.0) {
        return Err(Error::invalid(
            "p_a",
            format!("{} is outside (0, 1)", cfg.p_a),
        ));
    }
    prior.validate()?;
    let obs = Observation::new(y, pilots, cfg.noise_var())?;
    let l0 = cfg.prior_llr();
    let opts = InnerOptions::from_config(cfg);
    let truth_masked = truth.map(|t| t.masked_channel());

    let mut hyper = vec![HyperEstimate::initial(prior); cfg.groups];
    let mut state = bmp::init_messages(cfg, profiles, &hyper);
    let mut decision: Option<DecisionState> = None;
    let mut trace = RunTrace::default();
    let mut total = 0;

    for outer in 1..=cfg.n_out {
        let priors = PriorMoments::from_hyper(profiles, &hyper, cfg.em_variant);
        let mut rows = Vec::with_capacity(cfg.n_in);
        let mut observe = |inner: usize, d: &DecisionState| {
            total += 1;
            rows.push(record(
                outer,
                inner,
                total,
                d,
                truth,
                truth_masked.as_deref(),
            ));
        };
        let d = bmp::run_inner(
            &obs,
            &priors,
            l0,
            cfg.n_in,
            opts,
            &mut state,
            decision.take(),
            &mut observe,
        )?;

        let sets = select_em_set(&d, profiles, cfg.eta_th, cfg.groups);
        for (g, set) in sets.iter().enumerate() {
            let update = match cfg.em_variant {
                EmVariant::BothComponents => em_update(&d, profiles, set),
                EmVariant::LosOnly => em_update_los_only(&d, profiles, set),
            };
            if let Some(h) = update {
                hyper[g] = h;
            }
        }
        trace.outer.push(OuterRecord {
            hyper: hyper.clone(),
            em_set_sizes: sets.iter().map(Vec::len).collect(),
            iterations: rows,
        });
        decision = Some(d);
    }

    if trace.em_never_updated() && cfg.n_out > 0 {
        log::debug!(
            "EM set was empty in every outer iteration; impairment estimate left at its prior"
        );
    }

    let decision = match decision {
        Some(d) => d,
        None => {
            let priors = PriorMoments::from_hyper(profiles, &hyper, cfg.em_variant);
            bmp::decide(&state, &priors, l0, None)
        }
    };
    Ok(EstimationResult {
        h_hat: decision.masked_estimate(),
        active_hat: decision.active_hat,
        hyper_hat: hyper,
        trace,
    })
}

fn record(
    outer: usize,
    inner: usize,
    total: usize,
    d: &DecisionState,
    truth: Option<&ChannelRealization>,
    truth_masked: Option<&[C64]>,
) -> IterationRecord {
    let finite: Vec<f64> = d
        .delta_k
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .collect();
    let mean_delta = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    IterationRecord {
        outer,
        inner,
        total,
        nmse: truth_masked.and_then(|t| metrics::nmse(&d.masked_estimate(), t)),
        uad_errors: truth.map(|t| metrics::uad_errors(&d.active_hat, &t.activity)),
        mean_delta,
    }
}

/// Same message state, decisions and priors but with the EM layer removed:
/// `n_iter` inner iterations at fixed priors. Used as a reference point.
pub fn run_fixed_prior(
    obs: &Observation,
    priors: &PriorMoments,
    p_a: f64,
    n_iter: usize,
    opts: InnerOptions,
) -> Result<DecisionState> {
    let l0 = bmp::prior_llr(p_a);
    let mut state = MessageState::from_prior(priors, obs.pilots.pilot_len(), l0);
    bmp::run_inner(
        obs,
        priors,
        l0,
        n_iter,
        opts,
        &mut state,
        None,
        &mut |_, _| {},
    )
}
