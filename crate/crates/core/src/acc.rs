//! Adaptive cruise control: a follower with unknown road-load resistance
//! behind a lead vehicle at constant speed.
//!
//! State is `y = (x, v, z)`: follower position, follower speed, and gap to
//! the lead vehicle. Resistance enters through `θ·(1, v, v²)`, with `θ`
//! carrying the negated coefficients so the model reads `ẏ = f + g·u + θΔ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::safety::{Barrier, BarrierSpec, ClassK, ConstraintMode};
use crate::sim::{ClosedLoop, ControlAffine, EstimatorSetup, PlantModel, SimSchedule};

/// Row of `θ` that carries the resistance coefficients.
pub const SPEED_ROW: usize = 1;

/// How `f1` and `f2` are scaled into accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResistanceUnits {
    /// `f1` in N·s/m and `f2` in N·s²/m², divided by the mass.
    #[default]
    PerMass,
    /// `f1`, `f2` already in acceleration units and used as-is.
    Acceleration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccParams {
    /// kg
    pub mass: f64,
    /// m/s²
    pub g_acc: f64,
    /// Lead vehicle speed, m/s.
    pub v0: f64,
    /// Slope resistance per unit mass, m/s².
    pub f0_over_m: f64,
    pub f1: f64,
    pub f2: f64,
    pub resistance_units: ResistanceUnits,
    /// Initial gap, m.
    pub z0: f64,
    /// Initial follower speed, m/s.
    pub v_init: f64,
    /// Wheel force limits, N.
    pub u_min: f64,
    pub u_max: f64,
    /// Headway time, s.
    pub headway: f64,
    /// Braking deceleration assumed by the barrier, m/s².
    pub a_brake: f64,
    /// Reference force is `(bias + amplitude·sin(frequency·t))·m·g`.
    pub u_ref_bias: f64,
    pub u_ref_amplitude: f64,
    pub u_ref_frequency: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        // limits are ±0.4·m·g and braking 0.4·g, written out exactly
        Self {
            mass: 1600.0,
            g_acc: 9.81,
            v0: 10.0,
            f0_over_m: 0.981,
            f1: 0.0013,
            f2: 0.00125,
            resistance_units: ResistanceUnits::PerMass,
            z0: 50.0,
            v_init: 10.0,
            u_min: -6278.4,
            u_max: 6278.4,
            headway: 1.8,
            a_brake: 3.924,
            u_ref_bias: 0.15,
            u_ref_amplitude: 0.1,
            u_ref_frequency: 1.0,
        }
    }
}

impl AccParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("acc: {what}")));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !(self.g_acc > 0.0) {
            return bad("g_acc must be positive");
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return bad("force limits must satisfy u_min < 0 < u_max");
        }
        if !(self.headway > 0.0) {
            return bad("headway must be positive");
        }
        if !(self.a_brake > 0.0) {
            return bad("a_brake must be positive");
        }
        if !(self.z0 > self.headway * self.v_init) {
            return bad("initial gap must exceed headway·v_init");
        }
        let all = [
            self.v0,
            self.f0_over_m,
            self.f1,
            self.f2,
            self.z0,
            self.v_init,
            self.u_ref_bias,
            self.u_ref_amplitude,
            self.u_ref_frequency,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        Ok(())
    }

    /// Factor turning `f1`, `f2` into acceleration coefficients.
    pub fn resistance_scale(&self) -> f64 {
        match self.resistance_units {
            ResistanceUnits::PerMass => 1.0 / self.mass,
            ResistanceUnits::Acceleration => 1.0,
        }
    }

    /// True resistance row `−(f0/m, f1·s, f2·s)`.
    pub fn resistance_row(&self) -> [f64; 3] {
        let s = self.resistance_scale();
        [-self.f0_over_m, -self.f1 * s, -self.f2 * s]
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(vec![0.0, self.v_init, self.z0])
    }
}

/// Which resistance terms the estimator sees in its regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccExperiment {
    /// Regressor `(1)`: only `f0/m`; `f1`, `f2` act as bounded disturbances.
    #[default]
    SlopeOnly,
    /// Regressor `(1, v, v²)`: all three coefficients.
    AllResistances,
}

impl AccExperiment {
    pub fn regressor_dim(&self) -> usize {
        match self {
            AccExperiment::SlopeOnly => 1,
            AccExperiment::AllResistances => 3,
        }
    }

    /// Filter poles `1..=p`.
    pub fn default_filter_poles(&self) -> Vec<f64> {
        (1..=self.regressor_dim()).map(|i| i as f64).collect()
    }

    /// Unit gains leave the scalar case with `δ → 1`. With `(1, v, v²)` the
    /// filtered columns are nearly collinear around cruise speed, so the
    /// gains are raised to keep `δ` away from zero.
    pub fn default_filter_gains(&self) -> Vec<f64> {
        match self {
            AccExperiment::SlopeOnly => vec![1.0],
            AccExperiment::AllResistances => vec![10.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccDynamics {
    pub mass: f64,
    pub v0: f64,
    pub experiment: AccExperiment,
}

impl ControlAffine for AccDynamics {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn regressor_dim(&self) -> usize {
        self.experiment.regressor_dim()
    }

    fn drift(&self, y: &DVector<f64>) -> DVector<f64> {
        let v = y[1];
        DVector::from_vec(vec![v, 0.0, self.v0 - v])
    }

    fn input_matrix(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[0.0, 1.0 / self.mass, 0.0])
    }

    fn regressor(&self, y: &DVector<f64>) -> DVector<f64> {
        let v = y[1];
        match self.experiment {
            AccExperiment::SlopeOnly => DVector::from_element(1, 1.0),
            AccExperiment::AllResistances => DVector::from_vec(vec![1.0, v, v * v]),
        }
    }

    fn state_names(&self) -> Vec<String> {
        ["x", "v", "z"].map(String::from).to_vec()
    }
}

fn model_for(params: &AccParams, experiment: AccExperiment, d_bar: f64) -> Result<PlantModel> {
    let dynamics = AccDynamics {
        mass: params.mass,
        v0: params.v0,
        experiment,
    };
    let p = experiment.regressor_dim();
    let row = params.resistance_row();
    let mut theta = DMatrix::zeros(3, p);
    for j in 0..p {
        theta[(SPEED_ROW, j)] = row[j];
    }
    PlantModel::new(Arc::new(dynamics), theta, d_bar)
}

/// Full three-term resistance model (`n = 3`, `m = 1`, `p = 3`).
pub fn acc_model(params: &AccParams) -> Result<PlantModel> {
    params.validate()?;
    model_for(params, AccExperiment::AllResistances, 0.0)
}

/// Model seen by the estimator for `experiment`.
pub fn acc_estimation_model(params: &AccParams, experiment: AccExperiment) -> Result<PlantModel> {
    params.validate()?;
    model_for(params, experiment, 0.0)
}

/// `B(y) = z − T_h·v − (v − v₀)²/(2·a_brake)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwayBarrier {
    pub headway: f64,
    pub v0: f64,
    pub a_brake: f64,
}

impl Barrier for HeadwayBarrier {
    fn value(&self, y: &DVector<f64>) -> f64 {
        let dv = y[1] - self.v0;
        y[2] - self.headway * y[1] - dv * dv / (2.0 * self.a_brake)
    }

    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let dv = y[1] - self.v0;
        DVector::from_vec(vec![0.0, -self.headway - dv / self.a_brake, 1.0])
    }
}

pub fn acc_barrier(
    params: &AccParams,
    alpha: ClassK,
    mode: ConstraintMode,
    d_bar: f64,
) -> Result<BarrierSpec> {
    params.validate()?;
    let barrier = HeadwayBarrier {
        headway: params.headway,
        v0: params.v0,
        a_brake: params.a_brake,
    };
    BarrierSpec::new(Arc::new(barrier), alpha, mode, d_bar)
}

/// `(bias + amplitude·sin(ω t))·m·g`, in newtons.
pub fn reference_input(t: f64, params: &AccParams) -> f64 {
    (params.u_ref_bias + params.u_ref_amplitude * (params.u_ref_frequency * t).sin())
        * params.mass
        * params.g_acc
}

/// Prior intervals for the positive resistance coefficients, in the same
/// units as [`AccParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccPriors {
    pub f0_over_m: [f64; 2],
    pub f1: [f64; 2],
    pub f2: [f64; 2],
}

impl Default for AccPriors {
    fn default() -> Self {
        Self {
            f0_over_m: [0.0, 1.962],
            f1: [0.0, 0.002],
            f2: [0.0, 0.002],
        }
    }
}

impl AccPriors {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("f0_over_m", self.f0_over_m),
            ("f1", self.f1),
            ("f2", self.f2),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "priors.{name}: need lo ≤ hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Bounds on `θ` (negated and scaled) for the chosen regressor.
    pub fn theta_bounds(
        &self,
        params: &AccParams,
        experiment: AccExperiment,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = params.resistance_scale();
        let intervals = [
            self.f0_over_m,
            [self.f1[0] * s, self.f1[1] * s],
            [self.f2[0] * s, self.f2[1] * s],
        ];
        let p = experiment.regressor_dim();
        let mut lo = DMatrix::zeros(3, p);
        let mut hi = DMatrix::zeros(3, p);
        for j in 0..p {
            lo[(SPEED_ROW, j)] = -intervals[j][1];
            hi[(SPEED_ROW, j)] = -intervals[j][0];
        }
        (lo, hi)
    }
}

/// Worst-case acceleration from the terms left out of the slope-only
/// regressor: `(f1·v_max + f2·v_max²)·s`, using the prior upper limits.
pub fn unmodeled_resistance_bound(params: &AccParams, priors: &AccPriors, v_max: f64) -> f64 {
    (priors.f1[1] * v_max + priors.f2[1] * v_max * v_max) * params.resistance_scale()
}

/// Complete description of one ACC run.
#[derive(Debug, Clone, PartialEq)]
pub struct AccScenario {
    pub params: AccParams,
    pub experiment: AccExperiment,
    pub priors: AccPriors,
    pub gamma: f64,
    pub r: f64,
    pub filter_poles: Option<Vec<f64>>,
    pub filter_gains: Option<Vec<f64>>,
    pub mode: ConstraintMode,
    pub alpha: ClassK,
    pub schedule: SimSchedule,
    /// Magnitude bound of the injected state disturbance.
    pub d_bar: f64,
    /// Speed envelope used to bound the unmodeled resistance.
    pub v_max: f64,
    /// Rows of `θ` adapted online; the rest are taken as known zeros.
    pub estimation_mask: [bool; 3],
}

impl Default for AccScenario {
    fn default() -> Self {
        Self {
            params: AccParams::default(),
            experiment: AccExperiment::SlopeOnly,
            priors: AccPriors::default(),
            gamma: 2.0,
            r: 0.5,
            filter_poles: None,
            filter_gains: None,
            mode: ConstraintMode::Cor2,
            alpha: ClassK::Linear(1.0),
            schedule: SimSchedule::default(),
            d_bar: 0.0,
            v_max: 20.0,
            estimation_mask: [false, true, false],
        }
    }
}

impl AccScenario {
    /// Disturbance bound handed to the robust barrier: injected plus,
    /// for the slope-only regressor, the unmodeled resistance.
    pub fn barrier_d_bar(&self) -> f64 {
        let structural = match self.experiment {
            AccExperiment::SlopeOnly => {
                unmodeled_resistance_bound(&self.params, &self.priors, self.v_max)
            }
            AccExperiment::AllResistances => 0.0,
        };
        self.d_bar + structural
    }

    /// True `θ` restricted to the estimator's regressor.
    pub fn theta_true(&self) -> DMatrix<f64> {
        let row = self.params.resistance_row();
        let p = self.experiment.regressor_dim();
        let mut theta = DMatrix::zeros(3, p);
        for j in 0..p {
            theta[(SPEED_ROW, j)] = row[j];
        }
        theta
    }

    pub fn build(&self) -> Result<ClosedLoop> {
        self.params.validate()?;
        self.priors.validate()?;
        if !(self.d_bar >= 0.0) {
            return Err(Error::Config(format!(
                "d_bar must be non-negative, got {}",
                self.d_bar
            )));
        }
        let p = self.experiment.regressor_dim();
        let mut plant = acc_model(&self.params)?;
        plant.d_bar = self.d_bar;
        let model = acc_estimation_model(&self.params, self.experiment)?;
        let (prior_lo, prior_hi) = self.priors.theta_bounds(&self.params, self.experiment);
        let poles = self
            .filter_poles
            .clone()
            .unwrap_or_else(|| self.experiment.default_filter_poles());
        let gains = self
            .filter_gains
            .clone()
            .unwrap_or_else(|| self.experiment.default_filter_gains());
        let estimator = EstimatorSetup {
            gamma: self.gamma,
            r: self.r,
            theta_hat0: DMatrix::zeros(3, p),
            prior_lo,
            prior_hi,
            estimated_rows: self.estimation_mask.to_vec(),
            filter_poles: poles,
            filter_gains: gains,
        };
        let barrier = acc_barrier(&self.params, self.alpha, self.mode, self.barrier_d_bar())?;
        let params = self.params.clone();
        Ok(ClosedLoop {
            plant,
            model,
            schedule: self.schedule.clone(),
            estimator,
            barrier,
            input_lo: DVector::from_element(1, self.params.u_min),
            input_hi: DVector::from_element(1, self.params.u_max),
            x0: self.params.initial_state(),
            reference: Arc::new(move |t, _x| DVector::from_element(1, reference_input(t, &params))),
        })
    }
}
