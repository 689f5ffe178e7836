//! Bernoulli-Rician message passing.
//!
//! The factor graph has one sum node (SN) per received pilot symbol and one
//! variable node (VN) per device; every SN is connected to every VN. Each edge
//! carries a Rician message about the channel (a complex Gaussian mean and
//! variance) and a Bernoulli message about the activity, kept as an LLR.
//!
//! One inner iteration floods all SN edges, then all VN edges:
//!
//! - SN `l` treats every device but `k` as Gaussian interference with moments
//!   `(mu*, v*)` and emits the Rician message `((y_l - mu*)/P_kl, v*/|P_kl|^2)`
//!   plus the LLR of `y_l` under `alpha_k = 1` vs `alpha_k = 0`.
//! - VN `k` combines the prior with every *other* SN's messages (precision
//!   sums for the Rician part, LLR sums for the Bernoulli part).
//!
//! After the final iteration each VN combines *all* SN messages into its
//! channel estimate, and the activity decision adds an extra LLR term that
//! scores how far the estimate sits from zero relative to the prior.
//!
//! Edge arrays are stored SN-major: edge `(l, k)` lives at `l * K + k`.

use serde::{Deserialize, Serialize};

use crate::model::{
    DeviceProfile, EmVariant, Impairment, ImpairmentPrior, PilotMatrix, ScenarioConfig,
};
use crate::{Error, Result, C64};

/// LLRs are clamped to this magnitude before exponentiation.
pub const LLR_CLAMP: f64 = 40.0;
/// Lower bound on every computed variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Pilot entries with `|P_kl|^2` below this send neutral messages.
pub const PILOT_POWER_FLOOR: f64 = 1e-12;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Current estimate of one group's impairment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperEstimate {
    pub h_r_hat: f64,
    pub phi_delta_hat: f64,
}

impl HyperEstimate {
    /// Starting point of the outer loop: average fading, zero phase.
    pub fn initial(prior: &ImpairmentPrior) -> Self {
        HyperEstimate {
            h_r_hat: prior.h_bar_r,
            phi_delta_hat: 0.0,
        }
    }

    pub fn gain(&self) -> C64 {
        C64::from_polar(self.h_r_hat, self.phi_delta_hat)
    }
}

impl From<Impairment> for HyperEstimate {
    fn from(imp: Impairment) -> Self {
        HyperEstimate {
            h_r_hat: imp.h_r,
            phi_delta_hat: imp.phi_delta,
        }
    }
}

/// Per-device Gaussian prior of `h_k` given the current impairment estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMoments {
    pub mu_pri: Vec<C64>,
    pub v_pri: Vec<f64>,
}

impl PriorMoments {
    pub fn new(mu_pri: Vec<C64>, v_pri: Vec<f64>) -> Result<Self> {
        if mu_pri.len() != v_pri.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} prior means, {} prior variances",
                mu_pri.len(),
                v_pri.len()
            )));
        }
        if let Some(v) = v_pri.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid("v_pri", format!("{v} is not > 0")));
        }
        Ok(PriorMoments { mu_pri, v_pri })
    }

    /// Priors implied by per-group impairment estimates.
    ///
    /// With both components impaired, `h_k ~ CN(c los_k, |c|^2 v_ray_k)`; with
    /// only the LoS term impaired, `h_k ~ CN(c los_k, v_ray_k)`.
    pub fn from_hyper(
        profiles: &[DeviceProfile],
        hyper: &[HyperEstimate],
        variant: EmVariant,
    ) -> Self {
        let (mu_pri, v_pri) = profiles
            .iter()
            .map(|p| {
                let h = &hyper[p.group];
                let mu = h.gain() * p.los();
                let v = match variant {
                    EmVariant::BothComponents => h.h_r_hat * h.h_r_hat * p.v_ray,
                    EmVariant::LosOnly => p.v_ray,
                };
                (mu, v.max(VARIANCE_FLOOR))
            })
            .unzip();
        PriorMoments { mu_pri, v_pri }
    }

    /// Priors at the true impairments (genie knowledge).
    pub fn from_impairments(
        profiles: &[DeviceProfile],
        imps: &[Impairment],
        variant: EmVariant,
    ) -> Self {
        let hyper: Vec<HyperEstimate> = imps.iter().copied().map(HyperEstimate::from).collect();
        Self::from_hyper(profiles, &hyper, variant)
    }

    pub fn len(&self) -> usize {
        self.mu_pri.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_pri.is_empty()
    }
}

/// Tuning of the inner iterations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InnerOptions {
    /// Send the full (non-extrinsic) VN belief on every outgoing edge.
    pub full_message_approx: bool,
    /// Convex weight of the previous outgoing Rician mean (0 disables).
    pub damping: f64,
}

impl InnerOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        InnerOptions {
            full_message_approx: cfg.full_message_approx,
            damping: cfg.damping,
        }
    }
}

/// The received pilots together with the pilot matrix and noise power.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub y: &'a [C64],
    pub pilots: &'a PilotMatrix,
    pub noise_var: f64,
}

impl<'a> Observation<'a> {
    pub fn new(y: &'a [C64], pilots: &'a PilotMatrix, noise_var: f64) -> Result<Self> {
        if y.len() != pilots.pilot_len() {
            return Err(Error::DimensionMismatch(format!(
                "{} received symbols for pilot length {}",
                y.len(),
                pilots.pilot_len()
            )));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid(
                "noise_var",
                format!("{noise_var} is not >= 0"),
            ));
        }
        Ok(Observation {
            y,
            pilots,
            noise_var,
        })
    }
}

/// All edge messages of the factor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    devices: usize,
    symbols: usize,
    vn_mu: Vec<C64>,
    vn_v: Vec<f64>,
    vn_llr: Vec<f64>,
    // SN messages are kept in information form: precision and mean times
    // precision. A neutral message is (0, 0).
    sn_info: Vec<C64>,
    sn_prec: Vec<f64>,
    sn_llr: Vec<f64>,
}

impl MessageState {
    /// Every VN starts from its prior; SN messages start neutral (infinite
    /// variance, zero LLR).
    pub fn from_prior(prior: &PriorMoments, symbols: usize, l0: f64) -> Self {
        let devices = prior.len();
        let edges = devices * symbols;
        let mut vn_mu = Vec::with_capacity(edges);
        let mut vn_v = Vec::with_capacity(edges);
        for _ in 0..symbols {
            vn_mu.extend_from_slice(&prior.mu_pri);
            vn_v.extend_from_slice(&prior.v_pri);
        }
        MessageState {
            devices,
            symbols,
            vn_mu,
            vn_v,
            vn_llr: vec![l0; edges],
            sn_info: vec![ZERO; edges],
            sn_prec: vec![0.0; edges],
            sn_llr: vec![0.0; edges],
        }
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    #[inline]
    fn edge(&self, k: usize, l: usize) -> usize {
        debug_assert!(k < self.devices && l < self.symbols);
        l * self.devices + k
    }

    /// VN `k` to SN `l`: `(mean, variance, llr)`.
    pub fn vn(&self, k: usize, l: usize) -> (C64, f64, f64) {
        let e = self.edge(k, l);
        (self.vn_mu[e], self.vn_v[e], self.vn_llr[e])
    }

    /// SN `l` to VN `k`: `(mean, variance, llr)`.
    pub fn sn(&self, l: usize, k: usize) -> (C64, f64, f64) {
        let e = self.edge(k, l);
        let w = self.sn_prec[e];
        if w == 0.0 {
            (ZERO, f64::INFINITY, self.sn_llr[e])
        } else {
            (self.sn_info[e] / w, 1.0 / w, self.sn_llr[e])
        }
    }

    /// Overwrites one VN-to-SN message.
    pub fn set_vn(&mut self, k: usize, l: usize, mu: C64, v: f64, llr: f64) {
        let e = self.edge(k, l);
        self.vn_mu[e] = mu;
        self.vn_v[e] = v;
        self.vn_llr[e] = llr;
    }

    /// Overwrites one SN-to-VN message.
    pub fn set_sn(&mut self, l: usize, k: usize, mu: C64, v: f64, llr: f64) {
        let e = self.edge(k, l);
        let w = precision(v);
        self.sn_prec[e] = w;
        self.sn_info[e] = mu * w;
        self.sn_llr[e] = llr;
    }

    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.vn_v
            .iter()
            .copied()
            .chain(self.sn_prec.iter().map(|&w| 1.0 / w))
    }

    pub fn llrs(&self) -> impl Iterator<Item = f64> + '_ {
        self.vn_llr.iter().chain(&self.sn_llr).copied()
    }
}

/// Per-device decisions after an inner iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionState {
    pub mu_dec: Vec<C64>,
    pub mu_dec_prev: Vec<C64>,
    pub v_dec: Vec<f64>,
    pub llr_dec: Vec<f64>,
    /// Relative change of `mu_dec` since the previous decision; infinite when
    /// the previous estimate was exactly zero or absent.
    pub delta_k: Vec<f64>,
    pub active_hat: Vec<bool>,
}

impl DecisionState {
    /// `alpha_hat_k mu_dec_k`.
    pub fn masked_estimate(&self) -> Vec<C64> {
        self.mu_dec
            .iter()
            .zip(&self.active_hat)
            .map(|(&m, &a)| if a { m } else { ZERO })
            .collect()
    }
}

/// VN beliefs combining the prior with every incoming SN message.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMessages {
    pub mu: Vec<C64>,
    pub v: Vec<f64>,
    pub llr: Vec<f64>,
}

#[inline]
fn clamp_llr(l: f64) -> f64 {
    l.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// `(p, 1 - p)` for an LLR, clamped.
#[inline]
fn llr_to_probs(l: f64) -> (f64, f64) {
    let e = (-clamp_llr(l)).exp();
    let p = 1.0 / (1.0 + e);
    (p, e * p)
}

/// Probability that the Bernoulli variable is one.
pub fn llr_to_prob(l: f64) -> f64 {
    llr_to_probs(l).0
}

/// `ln(p / (1 - p))`, clamped.
pub fn prob_to_llr(p: f64) -> f64 {
    clamp_llr((p / (1.0 - p)).ln())
}

/// Prior activity LLR.
pub fn prior_llr(p_a: f64) -> f64 {
    (p_a / (1.0 - p_a)).ln()
}

#[inline]
fn precision(v: f64) -> f64 {
    if v.is_infinite() {
        0.0
    } else {
        1.0 / v
    }
}

/// Rician SN message from the interference moments: the channel that would
/// explain `y` exactly, with the interference variance mapped through the
/// pilot gain.
pub fn sn_rician(y: C64, mu_star: C64, v_star: f64, pilot: C64) -> (C64, f64) {
    let pw = pilot.norm_sqr();
    let mu = (y - mu_star) * pilot.conj() / pw;
    (mu, (v_star / pw).max(VARIANCE_FLOOR))
}

/// `ln f(y | mu1, v1) - ln f(y | mu*, v*)` for circular complex Gaussians.
pub fn sn_bernoulli_llr(y: C64, mu_star: C64, v_star: f64, mu_one: C64, v_one: f64) -> f64 {
    clamp_llr(
        (v_star / v_one).ln() + (y - mu_star).norm_sqr() / v_star - (y - mu_one).norm_sqr() / v_one,
    )
}

/// Fresh messages for every edge, sized from the configuration.
pub fn init_messages(
    cfg: &ScenarioConfig,
    profiles: &[DeviceProfile],
    hyper: &[HyperEstimate],
) -> MessageState {
    let prior = PriorMoments::from_hyper(profiles, hyper, cfg.em_variant);
    MessageState::from_prior(&prior, cfg.l, cfg.prior_llr())
}

fn check_dims(obs: &Observation, state: &MessageState) -> Result<()> {
    if obs.pilots.devices() != state.devices || obs.pilots.pilot_len() != state.symbols {
        return Err(Error::DimensionMismatch(format!(
            "pilot matrix {}x{} against message state for {} symbols x {} devices",
            obs.pilots.pilot_len(),
            obs.pilots.devices(),
            state.symbols,
            state.devices
        )));
    }
    if obs.y.len() != state.symbols {
        return Err(Error::DimensionMismatch(format!(
            "{} received symbols for {} sum nodes",
            obs.y.len(),
            state.symbols
        )));
    }
    Ok(())
}

/// Sum-node update of every SN-to-VN message.
pub fn sn_update(obs: &Observation, state: &mut MessageState) -> Result<()> {
    check_dims(obs, state)?;
    let kk = state.devices;
    let mut mean_terms = vec![ZERO; kk];
    let mut var_terms = vec![0.0; kk];
    for l in 0..state.symbols {
        let row = obs.pilots.row(l);
        let y = obs.y[l];
        let base = l * kk;

        // Interference moments of every device as seen through this symbol.
        let mut mean_total = ZERO;
        let mut var_total = obs.noise_var;
        for k in 0..kk {
            let e = base + k;
            let (p, q) = llr_to_probs(state.vn_llr[e]);
            let mu = state.vn_mu[e];
            let a = row[k] * mu * p;
            let b = row[k].norm_sqr() * p * (state.vn_v[e] + q * mu.norm_sqr());
            mean_terms[k] = a;
            var_terms[k] = b;
            mean_total += a;
            var_total += b;
        }

        // Same quantities as `sn_rician` / `sn_bernoulli_llr`, arranged to
        // keep divisions out of the per-edge path.
        for k in 0..kk {
            let e = base + k;
            let pilot = row[k];
            let pw = pilot.norm_sqr();
            if pw < PILOT_POWER_FLOOR {
                state.sn_info[e] = ZERO;
                state.sn_prec[e] = 0.0;
                state.sn_llr[e] = 0.0;
                continue;
            }
            let resid = y - mean_total + mean_terms[k];
            let v_star = (var_total - var_terms[k]).max(VARIANCE_FLOOR);
            let inv_star = 1.0 / v_star;
            let mut w = pw * inv_star;
            let mut info = resid * pilot.conj() * inv_star;
            if w > 1.0 / VARIANCE_FLOOR {
                info *= (1.0 / VARIANCE_FLOOR) / w;
                w = 1.0 / VARIANCE_FLOOR;
            }
            let v_one = v_star + pw * state.vn_v[e];
            let inv_one = 1.0 / v_one;
            let llr = (v_star * inv_one).ln() + resid.norm_sqr() * inv_star
                - (resid - pilot * state.vn_mu[e]).norm_sqr() * inv_one;
            state.sn_info[e] = info;
            state.sn_prec[e] = w;
            state.sn_llr[e] = clamp_llr(llr);
        }
    }
    Ok(())
}

/// Prior combined with all incoming SN messages, per device.
pub fn full_messages(state: &MessageState, prior: &PriorMoments, l0: f64) -> FullMessages {
    full_sums(state, prior, l0).messages()
}

/// Information-form sums behind [`FullMessages`].
struct FullSums {
    prec: Vec<f64>,
    info: Vec<C64>,
    llr: Vec<f64>,
}

impl FullSums {
    fn messages(&self) -> FullMessages {
        let v: Vec<f64> = self
            .prec
            .iter()
            .map(|p| (1.0 / p).max(VARIANCE_FLOOR))
            .collect();
        let mu = self
            .info
            .iter()
            .zip(&self.prec)
            .map(|(i, p)| i / p)
            .collect();
        FullMessages {
            mu,
            v,
            llr: self.llr.clone(),
        }
    }
}

fn full_sums(state: &MessageState, prior: &PriorMoments, l0: f64) -> FullSums {
    let kk = state.devices;
    let mut prec: Vec<f64> = prior.v_pri.iter().map(|v| 1.0 / v).collect();
    let mut info: Vec<C64> = prior
        .mu_pri
        .iter()
        .zip(&prior.v_pri)
        .map(|(m, v)| m / v)
        .collect();
    let mut llr = vec![l0; kk];
    for l in 0..state.symbols {
        let base = l * kk;
        let (w, i, r) = (
            &state.sn_prec[base..base + kk],
            &state.sn_info[base..base + kk],
            &state.sn_llr[base..base + kk],
        );
        for k in 0..kk {
            prec[k] += w[k];
            info[k] += i[k];
            llr[k] += r[k];
        }
    }
    FullSums { prec, info, llr }
}

/// Variable-node update of every VN-to-SN message.
pub fn vn_update(
    state: &mut MessageState,
    prior: &PriorMoments,
    l0: f64,
    opts: InnerOptions,
) -> Result<()> {
    if prior.len() != state.devices {
        return Err(Error::DimensionMismatch(format!(
            "{} priors for {} devices",
            prior.len(),
            state.devices
        )));
    }
    let sums = full_sums(state, prior, l0);
    vn_update_from(state, prior, &sums, &sums.messages(), opts);
    Ok(())
}

#[allow(clippy::needless_range_loop)]
fn vn_update_from(
    state: &mut MessageState,
    prior: &PriorMoments,
    sums: &FullSums,
    full: &FullMessages,
    opts: InnerOptions,
) {
    let kk = state.devices;
    let keep = opts.damping;
    let prior_prec: Vec<f64> = prior.v_pri.iter().map(|v| 1.0 / v).collect();
    for l in 0..state.symbols {
        let base = l * kk;
        for k in 0..kk {
            let e = base + k;
            let (mu, v, llr) = if opts.full_message_approx {
                (full.mu[k], full.v[k], clamp_llr(sums.llr[k]))
            } else {
                // Remove this edge's own contribution from the full belief.
                let prec = (sums.prec[k] - state.sn_prec[e]).max(prior_prec[k]);
                let v = (1.0 / prec).max(VARIANCE_FLOOR);
                let info = sums.info[k] - state.sn_info[e];
                (info / prec, v, clamp_llr(sums.llr[k] - state.sn_llr[e]))
            };
            state.vn_mu[e] = if keep > 0.0 {
                state.vn_mu[e] * keep + mu * (1.0 - keep)
            } else {
                mu
            };
            state.vn_v[e] = v;
            state.vn_llr[e] = llr;
        }
    }
}

/// Extra activity evidence from the channel estimate itself:
/// `ln f(mu_dec | mu_pri, v_pri + v_dec) - ln f(mu_dec | 0, v_dec)`.
pub fn estimate_llr(mu_dec: C64, v_dec: f64, mu_pri: C64, v_pri: f64) -> f64 {
    let spread = v_pri + v_dec;
    (v_dec / spread).ln() + mu_dec.norm_sqr() / v_dec - (mu_dec - mu_pri).norm_sqr() / spread
}

/// Channel estimates and activity decisions from the current SN messages.
///
/// `previous` supplies the estimate the relative variation is measured
/// against; without it every `delta_k` is infinite.
pub fn decide(
    state: &MessageState,
    prior: &PriorMoments,
    l0: f64,
    previous: Option<&DecisionState>,
) -> DecisionState {
    decide_from(&full_messages(state, prior, l0), prior, previous)
}

fn decide_from(
    full: &FullMessages,
    prior: &PriorMoments,
    previous: Option<&DecisionState>,
) -> DecisionState {
    let kk = full.mu.len();
    let mu_dec = full.mu.clone();
    let v_dec = full.v.clone();
    let llr_dec: Vec<f64> = (0..kk)
        .map(|k| full.llr[k] + estimate_llr(mu_dec[k], v_dec[k], prior.mu_pri[k], prior.v_pri[k]))
        .collect();
    let active_hat = llr_dec.iter().map(|&l| l > 0.0).collect();
    let (mu_dec_prev, delta_k) = match previous {
        Some(prev) => {
            let delta = mu_dec
                .iter()
                .zip(&prev.mu_dec)
                .map(|(cur, old)| {
                    let base = old.norm();
                    if base > 0.0 {
                        (cur - old).norm() / base
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            (prev.mu_dec.clone(), delta)
        }
        None => (vec![ZERO; kk], vec![f64::INFINITY; kk]),
    };
    DecisionState {
        mu_dec,
        mu_dec_prev,
        v_dec,
        llr_dec,
        delta_k,
        active_hat,
    }
}

/// `n_in` flooding iterations.
///
/// A decision is formed after every SN phase so that the last two give the
/// relative variation `delta_k`. `previous` is the decision preceding the
/// first iteration (e.g. from an earlier outer iteration); when absent it is
/// taken from the incoming state. `observe` sees `(t, decision)` for
/// `t = 1..=n_in`.
#[allow(clippy::too_many_arguments)]
pub fn run_inner(
    obs: &Observation,
    prior: &PriorMoments,
    l0: f64,
    n_in: usize,
    opts: InnerOptions,
    state: &mut MessageState,
    previous: Option<DecisionState>,
    observe: &mut dyn FnMut(usize, &DecisionState),
) -> Result<DecisionState> {
    check_dims(obs, state)?;
    if prior.len() != state.devices {
        return Err(Error::DimensionMismatch(format!(
            "{} priors for {} devices",
            prior.len(),
            state.devices
        )));
    }
    let mut decision = match previous {
        Some(d) => d,
        None => decide(state, prior, l0, None),
    };
    for t in 1..=n_in {
        sn_update(obs, state)?;
        let sums = full_sums(state, prior, l0);
        let full = sums.messages();
        decision = decide_from(&full, prior, Some(&decision));
        observe(t, &decision);
        vn_update_from(state, prior, &sums, &full, opts);
    }
    Ok(decision)
}
