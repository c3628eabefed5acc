//! Run configuration: a TOML document with every key optional, defaulting
//! to the cruise-control study.

use std::fs;
use std::path::{Path, PathBuf};

use safeid::acc::{AccExperiment, AccParams, AccPriors, AccScenario};
use safeid::drem::min_learning_rate;
use safeid::{ClassK, ConstraintMode, SimSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    #[default]
    Acc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub r: f64,
    /// Interval-excitation target for `∫κ²`. Defaults to the level at
    /// which every prior envelope is exhausted.
    pub beta: Option<f64>,
    /// Reject `gamma` below the minimum learning rate for `beta`.
    pub enforce_gamma: bool,
    /// Which rows of `θ` are adapted.
    pub estimation_mask: [bool; 3],
    pub filter_poles: Option<Vec<f64>>,
    pub filter_gains: Option<Vec<f64>>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            r: 0.5,
            beta: None,
            enforce_gamma: false,
            estimation_mask: [false, true, false],
            filter_poles: None,
            filter_gains: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub mode: ConstraintMode,
    pub alpha: ClassK,
    /// Bound on the injected disturbance norm.
    pub d_bar: f64,
    /// Speed envelope for the unmodeled-resistance margin.
    pub v_max: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            mode: ConstraintMode::Cor2,
            alpha: ClassK::Linear(1.0),
            d_bar: 0.0,
            v_max: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub dt_sim: f64,
    pub est_hz: f64,
    pub qp_hz: f64,
    pub horizon: f64,
    pub seed: u64,
    pub log_stride: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = SimSchedule::default();
        Self {
            dt_sim: s.dt_sim,
            est_hz: s.est_hz,
            qp_hz: s.qp_hz,
            horizon: s.horizon,
            seed: s.seed,
            log_stride: s.log_stride,
        }
    }
}

impl From<&ScheduleConfig> for SimSchedule {
    fn from(c: &ScheduleConfig) -> Self {
        SimSchedule {
            dt_sim: c.dt_sim,
            est_hz: c.est_hz,
            qp_hz: c.qp_hz,
            horizon: c.horizon,
            seed: c.seed,
            log_stride: c.log_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioId,
    pub experiment: AccExperiment,
    /// Output directory; the `--out` flag wins when both are given.
    pub out: Option<PathBuf>,
    pub acc: AccParams,
    pub priors: AccPriors,
    pub estimator: EstimatorConfig,
    pub barrier: BarrierConfig,
    pub schedule: ScheduleConfig,
}

fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without running [`validate`](Self::validate), for callers that
    /// still apply overrides.
    pub fn parse_unchecked(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: None,
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Default `beta`: the excitation that exhausts the widest prior.
    pub fn beta(&self) -> f64 {
        self.estimator.beta.unwrap_or_else(|| {
            let scenario = self.scenario_unchecked();
            let (lo, hi) = scenario
                .priors
                .theta_bounds(&scenario.params, scenario.experiment);
            let widest = (hi - lo).amax();
            2.0 * widest * widest / ((1.0 - self.estimator.r) * self.estimator.gamma)
        })
    }

    fn scenario_unchecked(&self) -> AccScenario {
        AccScenario {
            params: self.acc.clone(),
            experiment: self.experiment,
            priors: self.priors.clone(),
            gamma: self.estimator.gamma,
            r: self.estimator.r,
            filter_poles: self.estimator.filter_poles.clone(),
            filter_gains: self.estimator.filter_gains.clone(),
            mode: self.barrier.mode,
            alpha: self.barrier.alpha,
            schedule: SimSchedule::from(&self.schedule),
            d_bar: self.barrier.d_bar,
            v_max: self.barrier.v_max,
            estimation_mask: self.estimator.estimation_mask,
        }
    }

    pub fn scenario(&self) -> Result<AccScenario, CliError> {
        self.validate()?;
        Ok(self.scenario_unchecked())
    }

    /// Checks every precondition a run relies on, naming the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.estimator;
        if !(e.r > 0.0 && e.r < 1.0) {
            return Err(invalid(
                "estimator.r",
                format!("must lie in (0, 1), got {}", e.r),
            ));
        }
        if !(e.gamma > 0.0) || !e.gamma.is_finite() {
            return Err(invalid(
                "estimator.gamma",
                format!("must be positive, got {}", e.gamma),
            ));
        }
        if let Some(beta) = e.beta {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(invalid(
                    "estimator.beta",
                    format!("must be positive, got {beta}"),
                ));
            }
        }
        let p = self.experiment.regressor_dim();
        for (key, v) in [
            ("estimator.filter_poles", &e.filter_poles),
            ("estimator.filter_gains", &e.filter_gains),
        ] {
            if let Some(v) = v {
                if v.len() != p {
                    return Err(invalid(
                        key,
                        format!("needs {p} entries for this experiment, got {}", v.len()),
                    ));
                }
            }
        }
        if let Some(poles) = &e.filter_poles {
            if poles.iter().any(|l| !(*l > 0.0)) {
                return Err(invalid("estimator.filter_poles", "poles must be positive"));
            }
        }
        if !(self.barrier.d_bar >= 0.0) || !self.barrier.d_bar.is_finite() {
            return Err(invalid(
                "barrier.d_bar",
                format!("must be non-negative, got {}", self.barrier.d_bar),
            ));
        }
        if !(self.barrier.v_max > 0.0) {
            return Err(invalid("barrier.v_max", "must be positive"));
        }
        self.barrier
            .alpha
            .validate()
            .map_err(|err| invalid("barrier.alpha", err.to_string()))?;
        self.acc
            .validate()
            .map_err(|err| invalid("acc", err.to_string()))?;
        self.priors
            .validate()
            .map_err(|err| invalid("priors", err.to_string()))?;
        SimSchedule::from(&self.schedule)
            .validate()
            .map_err(|err| invalid("schedule", err.to_string()))?;

        if e.enforce_gamma {
            let beta = self.beta();
            let scenario = self.scenario_unchecked();
            let (lo, hi) = scenario
                .priors
                .theta_bounds(&scenario.params, scenario.experiment);
            for i in (0..3).filter(|&i| e.estimation_mask[i]) {
                for j in 0..p {
                    let diam = hi[(i, j)] - lo[(i, j)];
                    if diam == 0.0 {
                        continue;
                    }
                    let need = min_learning_rate(diam, e.r, beta)
                        .map_err(|err| invalid("estimator.beta", err.to_string()))?;
                    if e.gamma < need {
                        return Err(invalid(
                            "estimator.gamma",
                            format!("{} is below the minimum learning rate {need} for element ({i}, {j})", e.gamma),
                        ));
                    }
                }
            }
        }

        // full structural check, including B(x0) > Xi(0)
        self.scenario_unchecked()
            .build()
            .and_then(|cl| cl.validate())
            .map_err(|err| invalid("acc", err.to_string()))?;
        Ok(())
    }
}

/// Reads and parses `path` without validating it.
pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::parse_unchecked(&text).map_err(|e| match e {
        CliError::Parse { message, .. } => CliError::Parse {
            path: Some(path.to_path_buf()),
            message,
        },
        other => other,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let cfg = read_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.acc.mass, 1600.0);
        assert_eq!(cfg.acc.headway, 1.8);
        assert_eq!((cfg.estimator.gamma, cfg.estimator.r), (2.0, 0.5));
        assert_eq!(cfg.barrier.mode, ConstraintMode::Cor2);
    }

    #[test]
    fn rejects_exponent_outside_unit_interval() {
        let err = RunConfig::parse("[estimator]\nr = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("estimator.r"), "{err}");
    }

    #[test]
    fn accepts_table_values() {
        let cfg = RunConfig::parse("[estimator]\ngamma = 2.0\nr = 0.5\n").unwrap();
        assert_eq!(cfg.estimator.gamma, 2.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = RunConfig::parse("[estimator]\ngama = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
        assert!(RunConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn enforce_gamma_uses_beta() {
        // diam 1.962, r 0.5: gamma must reach 2·1.962²/(0.5·beta)
        let ok = "[estimator]\nenforce_gamma = true\nbeta = 7.7\n";
        RunConfig::parse(ok).unwrap();
        let err = RunConfig::parse("[estimator]\nenforce_gamma = true\nbeta = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("estimator.gamma"), "{err}");
    }

    #[test]
    fn default_beta_matches_exhaustion_level() {
        let cfg = RunConfig::default();
        assert!((cfg.beta() - 7.698888).abs() < 1e-6);
    }

    #[test]
    fn unsafe_start_names_the_problem() {
        let err = RunConfig::parse("[acc]\nz0 = 21.5\n").unwrap_err();
        assert!(err.to_string().contains("safe set"), "{err}");
    }

    #[test]
    fn filter_lengths_follow_experiment() {
        let err = RunConfig::parse(
            "experiment = \"all_resistances\"\n[estimator]\nfilter_gains = [1.0]\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("estimator.filter_gains"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.barrier.mode = ConstraintMode::Robust;
        cfg.barrier.alpha = ClassK::SignedQuadratic(0.5);
        cfg.schedule.est_hz = 1000.0;
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
