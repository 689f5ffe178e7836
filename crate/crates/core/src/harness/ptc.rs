//! Phase-transition search: the smallest pilot length that still gives
//! successful recovery, per activation probability.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draw_trial;
use crate::em;
use crate::metrics;
use crate::model::{Scenario, ScenarioConfig};
use crate::{Error, Result};

/// Default number of trials per bisection probe.
pub const DEFAULT_PTC_TRIALS: usize = 50;

/// When a probe counts as a success.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuccessCriterion {
    /// Mean activity error rate strictly below `1/K`.
    MeanBelowInverseK,
    /// Every trial has at most this many activity errors.
    MaxErrorsPerTrial(usize),
}

impl SuccessCriterion {
    pub fn holds(&self, errors: &[usize], k: usize) -> bool {
        match *self {
            SuccessCriterion::MeanBelowInverseK => {
                let rates: Vec<f64> = errors.iter().map(|&e| e as f64 / k as f64).collect();
                metrics::successful_recovery(&rates, k)
            }
            SuccessCriterion::MaxErrorsPerTrial(max) => {
                !errors.is_empty() && errors.iter().all(|&e| e <= max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtcSpec {
    /// Everything but `p_a` and `l`.
    pub base: ScenarioConfig,
    pub p_a_grid: Vec<f64>,
    pub l_min: usize,
    pub l_max: usize,
    /// Resolution of the search on `L`.
    pub l_step: usize,
    pub trials: usize,
    pub criterion: SuccessCriterion,
    pub seed: u64,
}

impl PtcSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p_a_grid.is_empty() {
            return Err(Error::invalid("p_a_grid", "empty grid"));
        }
        if !(1 <= self.l_min && self.l_min <= self.l_max) {
            return Err(Error::invalid(
                "l_min",
                format!("bounds [{}, {}] are not ordered", self.l_min, self.l_max),
            ));
        }
        if self.l_step == 0 {
            return Err(Error::invalid("l_step", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "need at least one trial"));
        }
        for &p in &self.p_a_grid {
            ScenarioConfig {
                p_a: p,
                l: self.l_min,
                ..self.base.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

/// Reference phase-transition settings: `K = 500`, SNR 40 dB, 15 outer
/// iterations.
pub fn ptc_preset() -> PtcSpec {
    PtcSpec {
        base: ScenarioConfig {
            snr_db: 40.0,
            n_out: 15,
            ..ScenarioConfig::default()
        },
        p_a_grid: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        l_min: 25,
        l_max: 500,
        l_step: 5,
        trials: DEFAULT_PTC_TRIALS,
        criterion: SuccessCriterion::MeanBelowInverseK,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtcProbe {
    pub l: usize,
    pub mean_uad_error_rate: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtcPoint {
    pub p_a: f64,
    /// `None` when even `l_max` fails.
    pub min_l: Option<usize>,
    pub sampling_ratio: Option<f64>,
    pub probes: Vec<PtcProbe>,
}

/// [`ptc_search_with`] using BR-MP-EM.
pub fn ptc_search(spec: &PtcSpec) -> Result<Vec<PtcPoint>> {
    ptc_search_with(spec, &|sc: &Scenario| {
        let r = em::run(
            &sc.received,
            &sc.pilots,
            &sc.config,
            &sc.profiles,
            &sc.config.impairment,
        )?;
        Ok(r.active_hat)
    })
}

/// Bisects `L` on the grid `l_min + i * l_step` (capped at `l_max`) for each
/// `p_a`, assuming success is monotone in `L`. `detect` returns the
/// estimated activity of a scenario.
pub fn ptc_search_with(
    spec: &PtcSpec,
    detect: &(dyn Fn(&Scenario) -> Result<Vec<bool>> + Sync),
) -> Result<Vec<PtcPoint>> {
    spec.validate()?;
    let mut grid: Vec<usize> = (spec.l_min..=spec.l_max).step_by(spec.l_step).collect();
    if *grid.last().expect("l_min <= l_max") != spec.l_max {
        grid.push(spec.l_max);
    }

    let mut points = Vec::with_capacity(spec.p_a_grid.len());
    for &p_a in &spec.p_a_grid {
        let mut seen: BTreeMap<usize, PtcProbe> = BTreeMap::new();
        let mut probe = |l: usize| -> Result<bool> {
            if let Some(p) = seen.get(&l) {
                return Ok(p.success);
            }
            let cfg = ScenarioConfig {
                p_a,
                l,
                ..spec.base.clone()
            };
            let errors: Vec<usize> = (0..spec.trials as u64)
                .into_par_iter()
                .map(|t| {
                    let draw = draw_trial(&cfg, spec.seed, t)?;
                    let a_hat = detect(&draw.scenario)?;
                    Ok(metrics::uad_errors(
                        &a_hat,
                        &draw.scenario.realization.activity,
                    ))
                })
                .collect::<Result<_>>()?;
            let success = spec.criterion.holds(&errors, cfg.k);
            let mean = errors.iter().sum::<usize>() as f64 / (errors.len() * cfg.k) as f64;
            log::info!("p_a = {p_a}, L = {l}: mean UAD error rate {mean:.3e}, success {success}");
            seen.insert(
                l,
                PtcProbe {
                    l,
                    mean_uad_error_rate: mean,
                    success,
                },
            );
            Ok(success)
        };

        let min_l = if !probe(grid[grid.len() - 1])? {
            None
        } else if probe(grid[0])? {
            Some(grid[0])
        } else {
            // grid[lo] fails, grid[hi] succeeds.
            let (mut lo, mut hi) = (0, grid.len() - 1);
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if probe(grid[mid])? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(grid[hi])
        };
        points.push(PtcPoint {
            p_a,
            min_l,
            sampling_ratio: min_l.map(|l| l as f64 / spec.base.k as f64),
            probes: seen.into_values().collect(),
        });
    }
    Ok(points)
}
