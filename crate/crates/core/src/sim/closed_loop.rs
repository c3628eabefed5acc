//! Dual-rate closed loop: estimation at `est_hz`, safety-filtered control at
//! `qp_hz`, plant integration at `dt_sim`.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::log::{LogRow, RowStatus, TrajectoryLog};
use super::plant::{rk4_step, sample_disturbance, PlantModel};
use crate::drem::{build_lre, EstimatorState, RegressorExtender};
use crate::error::{check_dim, Error, Result};
use crate::filters::FilterBank;
use crate::qp::{fallback_input, solve, QpProblem, QpStatus};
use crate::safety::{build_constraint, psi, xi, BarrierSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SimSchedule {
    pub dt_sim: f64,
    pub est_hz: f64,
    pub qp_hz: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Log every `log_stride`-th estimation sample; control updates are always logged.
    pub log_stride: usize,
}

impl Default for SimSchedule {
    fn default() -> Self {
        Self {
            dt_sim: 1e-5,
            est_hz: 10_000.0,
            qp_hz: 100.0,
            horizon: 30.0,
            seed: 0,
            log_stride: 10,
        }
    }
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let ratio = num / den;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-6 * rounded {
        return Err(Error::Config(format!(
            "{what} must be a positive integer, got {ratio}"
        )));
    }
    Ok(rounded as usize)
}

impl SimSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt_sim", self.dt_sim),
            ("est_hz", self.est_hz),
            ("qp_hz", self.qp_hz),
            ("horizon", self.horizon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "schedule.{name} must be positive, got {v}"
                )));
            }
        }
        if self.dt_sim > 1.0 / self.est_hz * (1.0 + 1e-9) || self.est_hz < self.qp_hz {
            return Err(Error::Config(
                "schedule must satisfy dt_sim ≤ 1/est_hz ≤ 1/qp_hz".into(),
            ));
        }
        if self.log_stride == 0 {
            return Err(Error::Config(
                "schedule.log_stride must be at least 1".into(),
            ));
        }
        self.substeps()?;
        self.est_per_qp()?;
        self.qp_steps()?;
        Ok(())
    }

    pub fn est_dt(&self) -> f64 {
        1.0 / self.est_hz
    }

    /// Integrator steps per estimation sample.
    pub fn substeps(&self) -> Result<usize> {
        integer_ratio(1.0 / self.est_hz, self.dt_sim, "1/(est_hz·dt_sim)")
    }

    pub fn est_per_qp(&self) -> Result<usize> {
        integer_ratio(self.est_hz, self.qp_hz, "est_hz/qp_hz")
    }

    /// Control updates inside the horizon, excluding the one at `t = 0`.
    pub fn qp_steps(&self) -> Result<usize> {
        integer_ratio(self.horizon * self.qp_hz, 1.0, "horizon·qp_hz")
    }
}

/// Estimator settings consumed by the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSetup {
    pub gamma: f64,
    pub r: f64,
    pub theta_hat0: DMatrix<f64>,
    pub prior_lo: DMatrix<f64>,
    pub prior_hi: DMatrix<f64>,
    pub estimated_rows: Vec<bool>,
    pub filter_poles: Vec<f64>,
    pub filter_gains: Vec<f64>,
}

pub type ReferenceFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Everything one run needs.
#[derive(Clone)]
pub struct ClosedLoop {
    /// Ground truth that gets integrated.
    pub plant: PlantModel,
    /// Structure known to the estimator and barrier; its `theta` is only
    /// used for reporting errors.
    pub model: PlantModel,
    pub schedule: SimSchedule,
    pub estimator: EstimatorSetup,
    pub barrier: BarrierSpec,
    pub input_lo: DVector<f64>,
    pub input_hi: DVector<f64>,
    pub x0: DVector<f64>,
    pub reference: ReferenceFn,
}

impl fmt::Debug for ClosedLoop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedLoop")
            .field("plant", &self.plant)
            .field("model", &self.model)
            .field("schedule", &self.schedule)
            .field("estimator", &self.estimator)
            .field("barrier", &self.barrier)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl ClosedLoop {
    pub fn initial_estimator(&self) -> Result<EstimatorState> {
        let e = &self.estimator;
        EstimatorState::new(
            e.theta_hat0.clone(),
            e.prior_lo.clone(),
            e.prior_hi.clone(),
            e.gamma,
            e.r,
            e.estimated_rows.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let (n, m, p) = (self.model.n(), self.model.m(), self.model.p());
        check_dim("plant state dimension", n, self.plant.n())?;
        check_dim("plant input dimension", m, self.plant.m())?;
        check_dim("initial state length", n, self.x0.len())?;
        check_dim("input lower bound length", m, self.input_lo.len())?;
        check_dim("input upper bound length", m, self.input_hi.len())?;
        check_dim("filter pole count", p, self.estimator.filter_poles.len())?;
        let est = self.initial_estimator()?;
        let b0 = self.barrier.barrier.value(&self.x0);
        let xi0 = xi(&est.bound);
        if !(b0 > xi0) {
            return Err(Error::Config(format!(
                "initial state outside the safe set: B(x0) = {b0} must exceed Xi(0) = {xi0}"
            )));
        }
        Ok(())
    }
}

struct ControlDecision {
    u: DVector<f64>,
    status: RowStatus,
    sbound: String,
    active_set: Vec<usize>,
}

fn decide(
    setup: &ClosedLoop,
    est: &EstimatorState,
    x: &DVector<f64>,
    u_ref: &DVector<f64>,
) -> Result<ControlDecision> {
    let dy = &setup.model.dynamics;
    let f_x = dy.drift(x);
    let g_x = dy.input_matrix(x);
    let reg = dy.regressor(x);
    let rates = est.bound_rates();
    let built = build_constraint(
        &setup.barrier,
        x,
        &f_x,
        &g_x,
        &reg,
        &est.theta_hat,
        &est.bound,
        &rates,
    );
    let (ineqs, sbound, degenerate) = match built {
        Ok(c) => (vec![c.inequality], c.choice.as_str().to_string(), false),
        Err(Error::InfeasibleInInput { b }) => {
            warn!("barrier has no authority over u at {x:?} (b = {b}); enforcing the box only");
            (Vec::new(), String::new(), true)
        }
        Err(e) => return Err(e),
    };
    let problem = QpProblem::new(
        u_ref.clone(),
        ineqs,
        setup.input_lo.clone(),
        setup.input_hi.clone(),
    )?;
    let sol = solve(&problem)?;
    Ok(match sol.status {
        QpStatus::Optimal => ControlDecision {
            u: sol.u,
            status: if degenerate {
                RowStatus::Degenerate
            } else {
                RowStatus::Optimal
            },
            sbound,
            active_set: sol.active_set,
        },
        QpStatus::Infeasible => ControlDecision {
            u: fallback_input(&problem),
            status: RowStatus::Infeasible,
            sbound,
            active_set: Vec::new(),
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn make_row(
    setup: &ClosedLoop,
    t: f64,
    x: &DVector<f64>,
    u_ref: &DVector<f64>,
    u: &DVector<f64>,
    est: &EstimatorState,
    delta: f64,
    status: RowStatus,
    sbound: String,
    active_set: Vec<usize>,
) -> Result<LogRow> {
    let grad = setup.barrier.barrier.gradient(x);
    let reg = setup.model.dynamics.regressor(x);
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().iter().copied().collect() };
    Ok(LogRow {
        t,
        x: x.iter().copied().collect(),
        u_ref: u_ref.iter().copied().collect(),
        u: u.iter().copied().collect(),
        barrier: setup.barrier.barrier.value(x),
        xi: xi(&est.bound),
        psi: psi(&grad, &reg, &est.bound)?,
        delta,
        kappa_sq_integral: est.kappa_sq_integral,
        theta_hat: row_major(&est.theta_hat),
        bound: row_major(&est.bound),
        status,
        sbound,
        active_set,
    })
}

/// Runs the safe-adaptation loop to the horizon.
///
/// Adaptation keeps running after `ψ` reaches zero; from then on the
/// constraint is the nominal barrier condition with the identified model.
pub fn run_closed_loop(setup: &ClosedLoop) -> Result<TrajectoryLog> {
    setup.validate()?;
    let sched = &setup.schedule;
    let substeps = sched.substeps()?;
    let est_per_qp = sched.est_per_qp()?;
    let total_est = sched.qp_steps()? * est_per_qp;
    let est_dt = sched.est_dt();
    let dt_sim = est_dt / substeps as f64;
    let (n, m, p) = (setup.model.n(), setup.model.m(), setup.model.p());

    let template = FilterBank::new(
        p,
        &setup.estimator.filter_poles,
        &setup.estimator.filter_gains,
        est_dt,
    )?;
    let mut extender = RegressorExtender::new(&template, n, p)?;
    let mut est = setup.initial_estimator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);

    let mut log = TrajectoryLog::new(setup.model.dynamics.state_names(), m, p);
    let mut x = setup.x0.clone();
    let mut u = DVector::zeros(m);
    let mut u_ref = DVector::zeros(m);
    let mut delta = 0.0;
    log.min_barrier_substep = setup.barrier.barrier.value(&x);

    for k in 0..=total_est {
        let t = k as f64 * est_dt;
        if k % est_per_qp == 0 {
            u_ref = (setup.reference)(t, &x);
            let decision = decide(setup, &est, &x, &u_ref)?;
            u = decision.u;
            log.rows.push(make_row(
                setup,
                t,
                &x,
                &u_ref,
                &u,
                &est,
                delta,
                decision.status,
                decision.sbound,
                decision.active_set,
            )?);
        } else if k % sched.log_stride == 0 {
            log.rows.push(make_row(
                setup,
                t,
                &x,
                &u_ref,
                &u,
                &est,
                delta,
                RowStatus::Hold,
                String::new(),
                Vec::new(),
            )?);
        }
        if k == total_est {
            break;
        }

        let d = sample_disturbance(n, setup.plant.d_bar, &mut rng);
        let mut x_next = x.clone();
        for s in 0..substeps {
            x_next = rk4_step(&setup.plant, &x_next, &u, &d, dt_sim).map_err(|e| match e {
                Error::SimulationFault { reason, state, .. } => Error::SimulationFault {
                    t: t + s as f64 * dt_sim,
                    reason,
                    state,
                },
                other => other,
            })?;
            log.min_barrier_substep = log
                .min_barrier_substep
                .min(setup.barrier.barrier.value(&x_next));
        }

        let dy = &setup.model.dynamics;
        let (lhs, reg) = build_lre(
            &x,
            &x_next,
            est_dt,
            &u,
            &dy.drift(&x),
            &dy.input_matrix(&x),
            &dy.regressor(&x),
        )?;
        let mixed = extender.extend_and_mix(&lhs, &reg)?;
        est.update(&mixed, est_dt)?;
        delta = mixed.delta;
        x = x_next;
    }
    Ok(log)
}
