//! Agreement between BR-MP-EM and the enumeration oracle on small systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draw_trial;
use crate::baselines::{self, ORACLE_MAX_DEVICES};
use crate::bmp::PriorMoments;
use crate::em;
use crate::metrics;
use crate::model::ScenarioConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckSpec {
    pub base: ScenarioConfig,
    pub trials: usize,
    pub seed: u64,
}

impl OracleCheckSpec {
    /// `K = k`, `L = l`, `p_a = 0.2`, SNR 30 dB.
    pub fn new(k: usize, l: usize, trials: usize) -> Self {
        OracleCheckSpec {
            base: ScenarioConfig {
                k,
                l,
                p_a: 0.2,
                snr_db: 30.0,
                ..ScenarioConfig::default()
            },
            trials,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    /// Fraction of trials where the detected support equals the oracle MAP support.
    pub agreement_rate: f64,
    pub brmpem_nmse_mean: f64,
    pub oracle_nmse_mean: f64,
    /// `brmpem_nmse_mean / oracle_nmse_mean`.
    pub nmse_ratio: f64,
    /// The same ratio in dB.
    pub nmse_gap_db: f64,
    pub resampled: u64,
}

/// The oracle is given priors at the true impairments; BR-MP-EM runs as in
/// deployment, from the average-fading prior.
pub fn oracle_check(spec: &OracleCheckSpec) -> Result<OracleReport> {
    let cfg = &spec.base;
    cfg.validate()?;
    if cfg.k > ORACLE_MAX_DEVICES {
        return Err(Error::OracleTooLarge {
            k: cfg.k,
            max: ORACLE_MAX_DEVICES,
        });
    }
    if spec.trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let rows: Vec<(bool, f64, f64, u64)> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| {
            let draw = draw_trial(cfg, spec.seed, t)?;
            let sc = &draw.scenario;
            let truth = sc.realization.masked_channel();
            let r = em::run(&sc.received, &sc.pilots, cfg, &sc.profiles, &cfg.impairment)?;
            let priors = PriorMoments::from_impairments(
                &sc.profiles,
                &sc.realization.impairments,
                cfg.em_variant,
            );
            let post = baselines::exact_posterior_oracle(
                &sc.received,
                &sc.pilots,
                &priors,
                cfg.p_a,
                cfg.noise_var(),
            )?;
            let nmse = |x: &[_]| metrics::nmse(x, &truth).expect("draw has an active device");
            Ok((
                r.active_hat == post.map_support,
                nmse(&r.h_hat),
                nmse(&post.mmse_estimate),
                draw.resampled,
            ))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let agree = rows.iter().filter(|r| r.0).count() as f64 / n;
    let bm = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let or = rows.iter().map(|r| r.2).sum::<f64>() / n;
    Ok(OracleReport {
        trials: rows.len(),
        agreement_rate: agree,
        brmpem_nmse_mean: bm,
        oracle_nmse_mean: or,
        nmse_ratio: bm / or,
        nmse_gap_db: 10.0 * (bm / or).log10(),
        resampled: rows.iter().map(|r| r.3).sum(),
    })
}
