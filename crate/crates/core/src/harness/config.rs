//! Flat TOML experiment files.
//!
//! ```toml
//! preset = "fig3"
//! snr_db = 10.0
//! sweep_axis = "l"
//! sweep_values = [150, 200, 250]
//! trials = 50
//! estimators = ["brmpem", "omp"]
//! seed = 7
//! ```
//!
//! Keys mirror the fields of [`ScenarioConfig`], [`ExperimentSpec`] and
//! [`PtcSpec`]; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{preset, ptc_preset, Estimator, ExperimentSpec, PtcSpec, SuccessCriterion, SweepAxis};
use crate::model::{EmVariant, ImpairmentPrior, ScenarioConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::invalid(
                "format",
                format!("unknown format `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub name: Option<String>,

    pub k: Option<usize>,
    pub l: Option<usize>,
    pub p_a: Option<f64>,
    pub snr_db: Option<f64>,
    pub n_in: Option<usize>,
    pub n_out: Option<usize>,
    pub eta_th: Option<f64>,
    pub em_variant: Option<EmVariant>,
    pub full_message_approx: Option<bool>,
    pub groups: Option<usize>,
    pub damping: Option<f64>,
    pub mu_r: Option<f64>,
    pub sigma_r: Option<f64>,
    pub sigma_delta: Option<f64>,
    pub h_los_sq_min: Option<f64>,
    pub h_los_sq_max: Option<f64>,
    pub v_ray_min: Option<f64>,
    pub v_ray_max: Option<f64>,

    pub sweep_axis: Option<String>,
    pub sweep_values: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,

    pub p_a_grid: Option<Vec<f64>>,
    pub l_min: Option<usize>,
    pub l_max: Option<usize>,
    pub l_step: Option<usize>,
    /// Allowed activity errors per trial; absent means "mean rate below 1/K".
    pub max_errors_per_trial: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| Error::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Overrides the scenario fields present in the file.
    pub fn apply_scenario(&self, cfg: &mut ScenarioConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            k,
            l,
            p_a,
            snr_db,
            n_in,
            n_out,
            eta_th,
            em_variant,
            full_message_approx,
            groups,
            damping
        );
        if self.mu_r.is_some() || self.sigma_r.is_some() || self.sigma_delta.is_some() {
            let imp = cfg.impairment;
            cfg.impairment = ImpairmentPrior::log_normal(
                self.mu_r.unwrap_or(imp.mu_r),
                self.sigma_r.unwrap_or(imp.sigma_r),
                self.sigma_delta.unwrap_or(imp.sigma_delta),
            )?;
        }
        let r = &mut cfg.ranges;
        r.h_los_sq.0 = self.h_los_sq_min.unwrap_or(r.h_los_sq.0);
        r.h_los_sq.1 = self.h_los_sq_max.unwrap_or(r.h_los_sq.1);
        r.v_ray.0 = self.v_ray_min.unwrap_or(r.v_ray.0);
        r.v_ray.1 = self.v_ray_max.unwrap_or(r.v_ray.1);
        cfg.validate()
    }

    /// The experiment described by the file on top of `preset_name` (which
    /// wins over the file's own `preset` key).
    pub fn experiment(&self, preset_name: Option<&str>) -> Result<ExperimentSpec> {
        let name = preset_name.or(self.preset.as_deref());
        let mut spec = match name {
            Some(p) => preset(p)?,
            None => {
                if self.sweep_axis.is_none() || self.sweep_values.is_none() {
                    return Err(Error::invalid(
                        "sweep_axis",
                        "without a preset the file must give sweep_axis and sweep_values",
                    ));
                }
                ExperimentSpec {
                    name: "custom".into(),
                    base: ScenarioConfig::default(),
                    axis: SweepAxis::SnrDb,
                    values: Vec::new(),
                    trials: super::DEFAULT_TRIALS,
                    estimators: vec![Estimator::Brmpem],
                    seed: 0,
                }
            }
        };
        self.apply_scenario(&mut spec.base)?;
        if let Some(n) = &self.name {
            spec.name = n.clone();
        }
        if let Some(a) = &self.sweep_axis {
            spec.axis = a.parse()?;
        }
        if let Some(v) = &self.sweep_values {
            spec.values = v.clone();
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(e) = &self.estimators {
            spec.estimators = e.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// The phase-transition search described by the file on top of the
    /// reference settings of [`ptc_preset`].
    pub fn ptc(&self) -> Result<PtcSpec> {
        let mut spec = ptc_preset();
        self.apply_scenario(&mut spec.base)?;
        if let Some(g) = &self.p_a_grid {
            spec.p_a_grid = g.clone();
        }
        spec.l_min = self.l_min.unwrap_or(spec.l_min);
        spec.l_max = self.l_max.unwrap_or(spec.l_max);
        spec.l_step = self.l_step.unwrap_or(spec.l_step);
        spec.trials = self.trials.unwrap_or(spec.trials);
        spec.seed = self.seed.unwrap_or(spec.seed);
        if let Some(m) = self.max_errors_per_trial {
            spec.criterion = SuccessCriterion::MaxErrorsPerTrial(m);
        }
        spec.validate()?;
        Ok(spec)
    }
}
