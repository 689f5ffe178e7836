//! System and channel model.
//!
//! Each of `K` devices is active with probability `p_a`. An active device
//! sends its length-`L` Gaussian pilot through the channel
//!
//! ```text
//! h_k = h_r e^{j phi_delta} (s_k + h_los_k e^{j phi_los_k}),   s_k ~ CN(0, v_ray_k)
//! ```
//!
//! where `(h_r, phi_delta)` is a fading/phase impairment shared by every device
//! of a group. The receiver observes `y = P (h ⊙ a) + n`.
//!
//! Conventions: a complex Gaussian "variance" is always `E|x|^2`, split evenly
//! over the real and imaginary parts, and every active device transmits at unit
//! power. The SNR axis is in ordinary decibels, `sigma_n^2 = 10^(-SNR/10)`.

use std::f64::consts::{LN_10, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Role};
use crate::{Error, Result, C64};

/// Decibel-to-neper factor of the log-normal fading law, `ln(10)/20`.
pub const FADING_DB_SCALE: f64 = LN_10 / 20.0;

/// Static per-device propagation parameters, assumed known at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// LoS amplitude.
    pub h_los: f64,
    /// LoS phase in `[-pi, pi]`.
    pub phi_los: f64,
    /// Scattering power.
    pub v_ray: f64,
    /// Impairment group.
    #[serde(default)]
    pub group: usize,
}

impl DeviceProfile {
    pub fn new(h_los: f64, phi_los: f64, v_ray: f64, group: usize) -> Result<Self> {
        let profile = DeviceProfile {
            h_los,
            phi_los,
            v_ray,
            group,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_los >= 0.0 && self.h_los.is_finite()) {
            return Err(Error::invalid(
                "h_los",
                format!("{} is not >= 0", self.h_los),
            ));
        }
        if !(self.v_ray > 0.0 && self.v_ray.is_finite()) {
            return Err(Error::invalid(
                "v_ray",
                format!("{} is not > 0", self.v_ray),
            ));
        }
        if !(-PI..=PI).contains(&self.phi_los) {
            return Err(Error::invalid(
                "phi_los",
                format!("{} is outside [-pi, pi]", self.phi_los),
            ));
        }
        Ok(())
    }

    /// The deterministic LoS term `h_los e^{j phi_los}`.
    pub fn los(&self) -> C64 {
        C64::from_polar(self.h_los, self.phi_los)
    }
}

/// Distribution of the shared impairment: log-normal fading (dB-domain scale
/// `sigma_r`) and a zero-mean Gaussian phase shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentPrior {
    pub mu_r: f64,
    pub sigma_r: f64,
    pub sigma_delta: f64,
    /// Average fading the receiver starts from.
    pub h_bar_r: f64,
}

impl ImpairmentPrior {
    /// Builds the prior with `h_bar_r` set to the log-normal mean.
    pub fn log_normal(mu_r: f64, sigma_r: f64, sigma_delta: f64) -> Result<Self> {
        let prior = ImpairmentPrior {
            mu_r,
            sigma_r,
            sigma_delta,
            h_bar_r: Self::mean_fading(mu_r, sigma_r),
        };
        prior.validate()?;
        Ok(prior)
    }

    /// `E[h_r] = exp(mu_r + (C sigma_r)^2 / 2)`.
    pub fn mean_fading(mu_r: f64, sigma_r: f64) -> f64 {
        let s = FADING_DB_SCALE * sigma_r;
        (mu_r + 0.5 * s * s).exp()
    }

    /// `E[h_r^2] = exp(2 mu_r + 2 (C sigma_r)^2)`.
    pub fn mean_square_fading(&self) -> f64 {
        let s = FADING_DB_SCALE * self.sigma_r;
        (2.0 * self.mu_r + 2.0 * s * s).exp()
    }

    /// Closed-form `Var[h_r e^{j phi_delta}]`.
    pub fn impairment_variance(&self) -> f64 {
        let mean = Self::mean_fading(self.mu_r, self.sigma_r)
            * (-0.5 * self.sigma_delta * self.sigma_delta).exp();
        self.mean_square_fading() - mean * mean
    }

    pub fn validate(&self) -> Result<()> {
        // sigma_r = 0 is accepted: it is the "no impairment" degenerate case.
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::invalid(
                "sigma_r",
                format!("{} is not >= 0", self.sigma_r),
            ));
        }
        if !(self.sigma_delta >= 0.0 && self.sigma_delta.is_finite()) {
            return Err(Error::invalid(
                "sigma_delta",
                format!("{} is not >= 0", self.sigma_delta),
            ));
        }
        if !(self.h_bar_r > 0.0 && self.h_bar_r.is_finite()) {
            return Err(Error::invalid(
                "h_bar_r",
                format!("{} is not > 0", self.h_bar_r),
            ));
        }
        if !self.mu_r.is_finite() {
            return Err(Error::invalid("mu_r", "not finite"));
        }
        Ok(())
    }
}

impl Default for ImpairmentPrior {
    fn default() -> Self {
        ImpairmentPrior::log_normal(0.13, 1.0, PI / 8.0).expect("default prior is valid")
    }
}

/// One draw of the shared impairment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impairment {
    pub h_r: f64,
    pub phi_delta: f64,
}

impl Impairment {
    /// `h_r e^{j phi_delta}`.
    pub fn gain(&self) -> C64 {
        C64::from_polar(self.h_r, self.phi_delta)
    }
}

/// Which channel components the impairment multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmVariant {
    /// `h = c (s + los)`.
    #[default]
    BothComponents,
    /// `h = s + c los`: the scattering power is not scaled.
    LosOnly,
}

/// Uniform sampling intervals for the static device parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRanges {
    /// Interval for `h_los^2`.
    pub h_los_sq: (f64, f64),
    pub v_ray: (f64, f64),
}

impl Default for ProfileRanges {
    fn default() -> Self {
        ProfileRanges {
            h_los_sq: (0.6, 0.7),
            v_ray: (0.2, 0.25),
        }
    }
}

impl ProfileRanges {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.h_los_sq;
        if !(a >= 0.0 && a <= b && b.is_finite()) {
            return Err(Error::invalid(
                "h_los_sq",
                format!("bad interval [{a}, {b}]"),
            ));
        }
        let (a, b) = self.v_ray;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::invalid("v_ray", format!("bad interval [{a}, {b}]")));
        }
        Ok(())
    }
}

/// System dimensions and algorithm knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub k: usize,
    pub l: usize,
    pub p_a: f64,
    pub snr_db: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub eta_th: f64,
    #[serde(default)]
    pub em_variant: EmVariant,
    #[serde(default)]
    pub full_message_approx: bool,
    pub seed: u64,
    /// Number of impairment groups; devices are assigned round-robin.
    #[serde(default = "one")]
    pub groups: usize,
    /// Damping applied to the outgoing Rician means (0 = none).
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub impairment: ImpairmentPrior,
    #[serde(default)]
    pub ranges: ProfileRanges,
}

fn one() -> usize {
    1
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            k: 500,
            l: 200,
            p_a: 0.1,
            snr_db: 10.0,
            n_in: 10,
            n_out: 5,
            eta_th: 0.2,
            em_variant: EmVariant::BothComponents,
            full_message_approx: false,
            seed: 0,
            groups: 1,
            damping: 0.0,
            impairment: ImpairmentPrior::default(),
            ranges: ProfileRanges::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k", "need at least one device"));
        }
        if self.l == 0 {
            return Err(Error::invalid("l", "need at least one pilot symbol"));
        }
        if !(self.p_a > 0.0 && self.p_a < 1.0) {
            return Err(Error::invalid(
                "p_a",
                format!("{} is outside (0, 1)", self.p_a),
            ));
        }
        if !(self.eta_th > 0.0 && self.eta_th <= 1.0) {
            return Err(Error::invalid(
                "eta_th",
                format!("{} is outside (0, 1]", self.eta_th),
            ));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::invalid("snr_db", "not finite"));
        }
        if self.groups == 0 || self.groups > self.k {
            return Err(Error::invalid(
                "groups",
                format!("{} groups for {} devices", self.groups, self.k),
            ));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(
                "damping",
                format!("{} is outside [0, 1)", self.damping),
            ));
        }
        self.impairment.validate()?;
        self.ranges.validate()
    }

    pub fn noise_var(&self) -> f64 {
        noise_var_from_snr(self.snr_db)
    }

    /// Prior activity LLR `ln(p_a / (1 - p_a))`.
    pub fn prior_llr(&self) -> f64 {
        (self.p_a / (1.0 - self.p_a)).ln()
    }
}

/// Ground truth of one access round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub activity: Vec<bool>,
    pub channel: Vec<C64>,
    /// One impairment per group.
    pub impairments: Vec<Impairment>,
    /// The scattering draws `s_k`.
    pub scattering: Vec<C64>,
    pub noise_var: f64,
}

impl ChannelRealization {
    /// Draws impairments, scattering and activity and assembles the channels.
    pub fn generate(cfg: &ScenarioConfig, profiles: &[DeviceProfile], seed: u64) -> Result<Self> {
        let impairments = {
            let mut rng = rng::stream(seed, Role::Impairment);
            (0..cfg.groups)
                .map(|_| sample_impairment(&cfg.impairment, &mut rng))
                .collect::<Vec<_>>()
        };
        let scattering = {
            let mut rng = rng::stream(seed, Role::Scattering);
            profiles
                .iter()
                .map(|p| complex_gaussian(&mut rng, p.v_ray))
                .collect::<Vec<_>>()
        };
        let activity = sample_activity(
            profiles.len(),
            cfg.p_a,
            &mut rng::stream(seed, Role::Activity),
        );
        Self::assemble(
            profiles,
            activity,
            impairments,
            scattering,
            cfg.noise_var(),
            cfg.em_variant,
        )
    }

    /// Builds a realization from its parts, computing the channel vector.
    pub fn assemble(
        profiles: &[DeviceProfile],
        activity: Vec<bool>,
        impairments: Vec<Impairment>,
        scattering: Vec<C64>,
        noise_var: f64,
        variant: EmVariant,
    ) -> Result<Self> {
        let k = profiles.len();
        if activity.len() != k || scattering.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{k} profiles, {} activity flags, {} scattering draws",
                activity.len(),
                scattering.len()
            )));
        }
        if let Some(p) = profiles.iter().find(|p| p.group >= impairments.len()) {
            return Err(Error::invalid(
                "group",
                format!(
                    "group {} has no impairment ({} given)",
                    p.group,
                    impairments.len()
                ),
            ));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid(
                "noise_var",
                format!("{noise_var} is not >= 0"),
            ));
        }
        let channel = profiles
            .iter()
            .zip(&scattering)
            .map(|(p, &s)| compose_channel(p, &impairments[p.group], s, variant))
            .collect();
        Ok(ChannelRealization {
            activity,
            channel,
            impairments,
            scattering,
            noise_var,
        })
    }

    /// `h ⊙ a`.
    pub fn masked_channel(&self) -> Vec<C64> {
        self.channel
            .iter()
            .zip(&self.activity)
            .map(|(&h, &a)| if a { h } else { C64::new(0.0, 0.0) })
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }
}

/// `h_k` from its components under the given impairment model.
pub fn compose_channel(
    profile: &DeviceProfile,
    impairment: &Impairment,
    scattering: C64,
    variant: EmVariant,
) -> C64 {
    let c = impairment.gain();
    match variant {
        EmVariant::BothComponents => c * (scattering + profile.los()),
        EmVariant::LosOnly => scattering + c * profile.los(),
    }
}

/// `L x K` pilot matrix stored row-major (`entries[l * K + k] = P_kl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<C64>,
}

impl PilotMatrix {
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} pilot matrix",
                entries.len()
            )));
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("pilots", "non-finite entry"));
        }
        Ok(PilotMatrix {
            rows,
            cols,
            entries,
        })
    }

    /// Pilot length `L`.
    pub fn pilot_len(&self) -> usize {
        self.rows
    }

    /// Device count `K`.
    pub fn devices(&self) -> usize {
        self.cols
    }

    pub fn get(&self, l: usize, k: usize) -> C64 {
        self.entries[l * self.cols + k]
    }

    /// Pilot symbols of all devices at time `l`.
    pub fn row(&self, l: usize) -> &[C64] {
        &self.entries[l * self.cols..(l + 1) * self.cols]
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// Device `k`'s pilot sequence.
    pub fn column(&self, k: usize) -> Vec<C64> {
        (0..self.rows).map(|l| self.get(l, k)).collect()
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }

    /// Same pilots with the device columns reordered: column `i` of the result
    /// is column `perm[i]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let entries = (0..self.rows)
            .flat_map(|l| perm.iter().map(move |&k| (l, k)))
            .map(|(l, k)| self.get(l, k))
            .collect();
        PilotMatrix {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    /// `P x`.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} against {} pilot columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|l| self.row(l).iter().zip(x).map(|(p, v)| p * v).sum())
            .collect())
    }
}

/// A complete, replayable access round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub profiles: Vec<DeviceProfile>,
    pub pilots: PilotMatrix,
    pub realization: ChannelRealization,
    /// Received pilot vector.
    pub received: Vec<C64>,
}

impl Scenario {
    /// Generates every random component from `cfg.seed`, each from its own
    /// stream.
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let profiles = sample_devices(cfg, &cfg.ranges, &mut rng::stream(cfg.seed, Role::Devices))?;
        Self::generate_with_profiles(cfg, profiles)
    }

    /// Like [`Scenario::generate`] but with fixed device profiles.
    pub fn generate_with_profiles(
        cfg: &ScenarioConfig,
        profiles: Vec<DeviceProfile>,
    ) -> Result<Self> {
        cfg.validate()?;
        if profiles.len() != cfg.k {
            return Err(Error::DimensionMismatch(format!(
                "{} profiles for k = {}",
                profiles.len(),
                cfg.k
            )));
        }
        let pilots = generate_pilots(cfg.k, cfg.l, &mut rng::stream(cfg.seed, Role::Pilots));
        let realization = ChannelRealization::generate(cfg, &profiles, cfg.seed)?;
        let received = synthesize(
            &pilots,
            &realization,
            &mut rng::stream(cfg.seed, Role::Noise),
        )?;
        Ok(Scenario {
            config: cfg.clone(),
            profiles,
            pilots,
            realization,
            received,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Draws `cfg.k` device profiles; groups are assigned round-robin.
pub fn sample_devices<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    ranges: &ProfileRanges,
    rng: &mut R,
) -> Result<Vec<DeviceProfile>> {
    ranges.validate()?;
    if cfg.groups == 0 {
        return Err(Error::invalid("groups", "need at least one group"));
    }
    Ok((0..cfg.k)
        .map(|k| {
            let phi_los = uniform(rng, -PI, PI);
            let h_los = uniform(rng, ranges.h_los_sq.0, ranges.h_los_sq.1).sqrt();
            let v_ray = uniform(rng, ranges.v_ray.0, ranges.v_ray.1);
            DeviceProfile {
                h_los,
                phi_los,
                v_ray,
                group: k % cfg.groups,
            }
        })
        .collect())
}

/// Overrides the round-robin group assignment.
pub fn assign_groups(profiles: &mut [DeviceProfile], map: &[usize]) -> Result<()> {
    if map.len() != profiles.len() {
        return Err(Error::DimensionMismatch(format!(
            "group map of length {} for {} devices",
            map.len(),
            profiles.len()
        )));
    }
    for (p, &g) in profiles.iter_mut().zip(map) {
        p.group = g;
    }
    Ok(())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// One draw of `(h_r, phi_delta)`.
pub fn sample_impairment<R: Rng + ?Sized>(prior: &ImpairmentPrior, rng: &mut R) -> Impairment {
    let z: f64 = rng.sample(StandardNormal);
    let w: f64 = rng.sample(StandardNormal);
    Impairment {
        h_r: (prior.mu_r + FADING_DB_SCALE * prior.sigma_r * z).exp(),
        phi_delta: prior.sigma_delta * w,
    }
}

/// I.i.d. Bernoulli(`p_a`) activity.
pub fn sample_activity<R: Rng + ?Sized>(k: usize, p_a: f64, rng: &mut R) -> Vec<bool> {
    (0..k).map(|_| rng.random::<f64>() < p_a).collect()
}

/// `CN(0, var)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let scale = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(scale * re, scale * im)
}

/// `L x K` matrix of i.i.d. `CN(0, 1)` pilot symbols.
pub fn generate_pilots<R: Rng + ?Sized>(k: usize, l: usize, rng: &mut R) -> PilotMatrix {
    let entries = (0..k * l).map(|_| complex_gaussian(rng, 1.0)).collect();
    PilotMatrix {
        rows: l,
        cols: k,
        entries,
    }
}

/// Received pilots `y = P (h ⊙ a) + n`, `n ~ CN(0, noise_var I)`.
pub fn synthesize<R: Rng + ?Sized>(
    pilots: &PilotMatrix,
    realization: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<C64>> {
    let mut y = pilots.apply(&realization.masked_channel())?;
    for v in &mut y {
        *v += complex_gaussian(rng, realization.noise_var);
    }
    Ok(y)
}

/// Noise power for an SNR in dB under unit transmit power.
pub fn noise_var_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
