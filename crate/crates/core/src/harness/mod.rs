//! Seeded Monte-Carlo experiments.
//!
//! Every trial draws its scenario from a seed derived from the root seed and
//! the trial index alone, so all sweep points of one experiment share the
//! same device, pilot and noise draws. Results are collected in trial order,
//! which makes the output independent of the worker count.

mod config;
mod emit;
mod oracle_check;
mod ptc;
mod trial;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ORACLE_MAX_DEVICES;
use crate::metrics::{self, TrialMetrics};
use crate::model::{ImpairmentPrior, Scenario, ScenarioConfig};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub use config::{ConfigFile, OutputFormat};
pub use emit::{emit, read_json, write_csv, write_json, CSV_HEADER};
pub use oracle_check::{oracle_check, OracleCheckSpec, OracleReport};
pub use ptc::{
    ptc_preset, ptc_search, ptc_search_with, PtcPoint, PtcProbe, PtcSpec, SuccessCriterion,
};
pub use trial::evaluate;

/// Default number of trials per sweep point.
pub const DEFAULT_TRIALS: usize = 200;

/// Give up on a trial after this many all-inactive draws.
pub const MAX_RESAMPLES: u64 = 1000;

/// Scenario parameter varied across an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    PA,
    L,
    SigmaR,
    SigmaDelta,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::SnrDb,
        SweepAxis::PA,
        SweepAxis::L,
        SweepAxis::SigmaR,
        SweepAxis::SigmaDelta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::PA => "p_a",
            SweepAxis::L => "l",
            SweepAxis::SigmaR => "sigma_r",
            SweepAxis::SigmaDelta => "sigma_delta",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::SnrDb => cfg.snr_db = value,
            SweepAxis::PA => cfg.p_a = value,
            SweepAxis::L => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::invalid(
                        "l",
                        format!("{value} is not a positive integer"),
                    ));
                }
                cfg.l = value as usize;
            }
            SweepAxis::SigmaR => {
                let imp = &base.impairment;
                cfg.impairment = ImpairmentPrior::log_normal(imp.mu_r, value, imp.sigma_delta)?;
            }
            SweepAxis::SigmaDelta => cfg.impairment.sigma_delta = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid("sweep_axis", format!("unknown axis `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Brmpem,
    Ls,
    Lmmse,
    Omp,
    Gammse,
    Oracle,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Brmpem,
        Estimator::Ls,
        Estimator::Lmmse,
        Estimator::Omp,
        Estimator::Gammse,
        Estimator::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Brmpem => "brmpem",
            Estimator::Ls => "ls",
            Estimator::Lmmse => "lmmse",
            Estimator::Omp => "omp",
            Estimator::Gammse => "gammse",
            Estimator::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::invalid("estimators", format!("unknown estimator `{s}`")))
    }
}

/// A sweep of one scenario parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: ScenarioConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep_values", "empty value list"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "need at least one trial"));
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid("estimators", "empty estimator set"));
        }
        if self.estimators.contains(&Estimator::Oracle) && self.base.k > ORACLE_MAX_DEVICES {
            return Err(Error::OracleTooLarge {
                k: self.base.k,
                max: ORACLE_MAX_DEVICES,
            });
        }
        for &v in &self.values {
            self.axis.apply(&self.base, v)?;
        }
        Ok(())
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 6] = ["fig3", "fig4", "fig5", "fig6", "fig6-delta", "fig7"];

/// Reference simulation settings by name. See [`PRESETS`].
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let base = ScenarioConfig::default();
    let snr_grid: Vec<f64> = (0..=8).map(|i| 5.0 * i as f64).collect();
    let spec =
        |axis, values: Vec<f64>, base: ScenarioConfig, estimators: Vec<Estimator>| ExperimentSpec {
            name: name.to_string(),
            base,
            axis,
            values,
            trials: DEFAULT_TRIALS,
            estimators,
            seed: 0,
        };
    let brmpem = vec![Estimator::Brmpem];
    Ok(match name {
        "fig3" => spec(SweepAxis::SnrDb, snr_grid, base, brmpem),
        "fig4" => spec(
            SweepAxis::PA,
            vec![0.1, 0.13, 0.16, 0.19, 0.22, 0.25],
            base,
            brmpem,
        ),
        "fig5" => spec(
            SweepAxis::L,
            vec![150.0, 175.0, 200.0, 225.0, 250.0, 275.0, 300.0],
            ScenarioConfig {
                p_a: 0.25,
                n_out: 6,
                ..base
            },
            brmpem,
        ),
        "fig6" => spec(
            SweepAxis::SigmaR,
            (1..=7).map(f64::from).collect(),
            ScenarioConfig { n_out: 8, ..base },
            brmpem,
        ),
        "fig6-delta" => {
            use std::f64::consts::PI;
            spec(
                SweepAxis::SigmaDelta,
                vec![PI / 8.0, PI / 4.0, PI / 2.0, PI],
                ScenarioConfig { n_out: 8, ..base },
                brmpem,
            )
        }
        "fig7" => spec(
            SweepAxis::SnrDb,
            snr_grid,
            ScenarioConfig { n_out: 2, ..base },
            vec![
                Estimator::Brmpem,
                Estimator::Ls,
                Estimator::Lmmse,
                Estimator::Omp,
                Estimator::Gammse,
            ],
        ),
        other => {
            return Err(Error::invalid(
                "preset",
                format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                ),
            ))
        }
    })
}

/// Aggregates of one estimator at one sweep value, with the per-trial data
/// they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub estimator: Estimator,
    pub trials: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub uad_err_mean: Option<f64>,
    pub uad_err_std: Option<f64>,
    pub hyper_mse_mean: Option<f64>,
    pub iters_to_converge_mean: Option<f64>,
    /// All-inactive draws skipped while filling this row's trials.
    pub resampled: u64,
    pub per_trial: Vec<TrialMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub axis: SweepAxis,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn empty(name: &str, axis: SweepAxis, seed: u64) -> Self {
        ResultTable {
            name: name.to_string(),
            axis,
            seed,
            rows: Vec::new(),
        }
    }

    pub fn rows_for(&self, estimator: Estimator) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }
}

/// A generated trial scenario and the number of all-inactive draws skipped
/// to get it.
pub struct TrialDraw {
    pub scenario: Scenario,
    pub resampled: u64,
}

/// Scenario of trial `trial` under `root`, redrawn until at least one
/// device is active.
pub fn draw_trial(cfg: &ScenarioConfig, root: u64, trial: u64) -> Result<TrialDraw> {
    for attempt in 0..MAX_RESAMPLES {
        let trial_cfg = ScenarioConfig {
            seed: derive_seed(root, &[trial, attempt]),
            ..cfg.clone()
        };
        let scenario = Scenario::generate(&trial_cfg)?;
        if scenario.realization.active_count() > 0 {
            return Ok(TrialDraw {
                scenario,
                resampled: attempt,
            });
        }
    }
    Err(Error::invalid(
        "p_a",
        format!(
            "no active device in {MAX_RESAMPLES} draws at p_a = {}",
            cfg.p_a
        ),
    ))
}

/// Runs every (sweep value, trial) pair on the current rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let configs: Vec<ScenarioConfig> = spec
        .values
        .iter()
        .map(|&v| spec.axis.apply(&spec.base, v))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<(u64, Vec<TrialMetrics>)> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let draw = draw_trial(&configs[p], spec.seed, t as u64)?;
            let metrics = evaluate(&draw.scenario, &spec.estimators)?;
            Ok((draw.resampled, metrics))
        })
        .collect::<Result<_>>()?;

    let mut table = ResultTable::empty(&spec.name, spec.axis, spec.seed);
    for (p, &value) in spec.values.iter().enumerate() {
        let chunk = &outcomes[p * spec.trials..(p + 1) * spec.trials];
        let resampled: u64 = chunk.iter().map(|(r, _)| r).sum();
        if resampled > 0 {
            log::info!(
                "{} = {value}: resampled {resampled} all-inactive draws",
                spec.axis
            );
        }
        for (i, &est) in spec.estimators.iter().enumerate() {
            let per_trial: Vec<TrialMetrics> = chunk.iter().map(|(_, m)| m[i].clone()).collect();
            table.rows.push(aggregate(value, est, resampled, per_trial));
        }
    }
    Ok(table)
}

/// Mean and sample standard deviation over the per-trial metrics.
pub fn aggregate(
    sweep_value: f64,
    estimator: Estimator,
    resampled: u64,
    per_trial: Vec<TrialMetrics>,
) -> ResultRow {
    let nmse: Vec<f64> = per_trial.iter().map(|m| m.nmse).collect();
    let uad: Option<Vec<f64>> = per_trial.iter().map(|m| m.uad_error_rate).collect();
    let hyper: Option<Vec<f64>> = per_trial.iter().map(|m| m.hyper_mse).collect();
    let iters: Option<Vec<f64>> = per_trial
        .iter()
        .map(|m| m.iterations_to_converge.map(|i| i as f64))
        .collect();
    let nonempty = |v: Option<Vec<f64>>| v.filter(|v| !v.is_empty());
    let uad = nonempty(uad);
    ResultRow {
        sweep_value,
        estimator,
        trials: per_trial.len(),
        nmse_mean: metrics::mean(&nmse),
        nmse_std: metrics::sample_std(&nmse),
        uad_err_mean: uad.as_deref().map(metrics::mean),
        uad_err_std: uad.as_deref().map(metrics::sample_std),
        hyper_mse_mean: nonempty(hyper).as_deref().map(metrics::mean),
        iters_to_converge_mean: nonempty(iters).as_deref().map(metrics::mean),
        resampled,
        per_trial,
    }
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    Ok(pool.install(f))
}
