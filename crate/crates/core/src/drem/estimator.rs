//! Finite-time element-wise adaptation law and its worst-case error envelope.

use nalgebra::DMatrix;

use super::regression::ExtendedRegression;
use crate::error::{check_dim, Error, Result};

/// Odd extension of the fractional power: `sign(s)·|s|^r`.
pub fn signed_pow(s: f64, r: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.signum() * s.abs().powf(r)
    }
}

/// Smallest learning rate that drives an element with prior diameter `diam`
/// to zero error once `∫κ² ≥ beta`.
pub fn min_learning_rate(diam: f64, r: f64, beta: f64) -> Result<f64> {
    if !(diam > 0.0) || !(beta > 0.0) {
        return Err(Error::Config(format!(
            "min_learning_rate needs diam > 0 and beta > 0 (diam = {diam}, beta = {beta})"
        )));
    }
    check_exponent(r)?;
    Ok(2.0 * diam * diam / ((1.0 - r) * beta))
}

fn check_exponent(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "exponent r must lie in (0, 1), got {r}"
        )))
    }
}

fn bracket(diam: f64, gamma: f64, r: f64, kappa_sq_integral: f64) -> f64 {
    diam * diam - 0.5 * (1.0 - r) * gamma * kappa_sq_integral
}

/// `[Δθ² − ((1−r)γ/2)·∫κ²]₊^{1/(1−r)}`, never larger than the prior diameter.
///
/// The envelope is clamped below at zero once the excitation budget is
/// spent, and above at `diam` since the error of an estimate started
/// inside its prior interval cannot exceed that interval's width.
pub fn worst_case_bound(diam: f64, gamma: f64, r: f64, kappa_sq_integral: f64) -> f64 {
    let b = bracket(diam, gamma, r, kappa_sq_integral);
    if b <= 0.0 {
        return 0.0;
    }
    b.powf(1.0 / (1.0 - r)).min(diam)
}

/// Time derivative of [`worst_case_bound`] given the current `κ²`.
///
/// Zero where the envelope is clamped (spent, or pinned at the diameter).
pub fn bound_rate(diam: f64, gamma: f64, r: f64, kappa_sq: f64, kappa_sq_integral: f64) -> f64 {
    let b = bracket(diam, gamma, r, kappa_sq_integral);
    if b <= 0.0 || kappa_sq == 0.0 {
        return 0.0;
    }
    if b.powf(1.0 / (1.0 - r)) > diam {
        return 0.0;
    }
    -0.5 * gamma * kappa_sq * b.powf(r / (1.0 - r))
}

/// Interval-excitation monitor: `∫κ² ≥ β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IeStatus {
    pub kappa_sq_integral: f64,
    pub beta_target: f64,
    pub satisfied: bool,
    /// First time the condition held; the empirical `t_c`.
    pub satisfied_at: Option<f64>,
}

impl IeStatus {
    pub fn new(beta_target: f64) -> Self {
        Self {
            kappa_sq_integral: 0.0,
            beta_target,
            satisfied: false,
            satisfied_at: None,
        }
    }

    pub fn update(&mut self, kappa_sq_integral: f64, t: f64) {
        self.kappa_sq_integral = kappa_sq_integral;
        self.satisfied = self.kappa_sq_integral >= self.beta_target;
        if self.satisfied && self.satisfied_at.is_none() {
            self.satisfied_at = Some(t);
        }
    }
}

/// Re-evaluates `status` against its stored integral at time `t`.
pub fn ie_check(status: &IeStatus, t: f64) -> IeStatus {
    let mut next = *status;
    next.update(status.kappa_sq_integral, t);
    next
}

/// Element-wise estimator of the `n×p` parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub theta_hat: DMatrix<f64>,
    pub prior_lo: DMatrix<f64>,
    pub prior_hi: DMatrix<f64>,
    pub diam: DMatrix<f64>,
    pub gamma: f64,
    pub r: f64,
    pub kappa_sq_integral: f64,
    /// `κ²` at the most recent update.
    pub kappa_sq: f64,
    pub bound: DMatrix<f64>,
    /// Rows excluded here are known to be structurally zero and never move.
    pub estimated_rows: Vec<bool>,
}

impl EstimatorState {
    pub fn new(
        theta_hat0: DMatrix<f64>,
        prior_lo: DMatrix<f64>,
        prior_hi: DMatrix<f64>,
        gamma: f64,
        r: f64,
        estimated_rows: Vec<bool>,
    ) -> Result<Self> {
        let (n, p) = theta_hat0.shape();
        check_dim("prior_lo rows", n, prior_lo.nrows())?;
        check_dim("prior_lo columns", p, prior_lo.ncols())?;
        check_dim("prior_hi rows", n, prior_hi.nrows())?;
        check_dim("prior_hi columns", p, prior_hi.ncols())?;
        check_dim("estimation mask length", n, estimated_rows.len())?;
        check_exponent(r)?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {gamma}"
            )));
        }
        for i in 0..n {
            for j in 0..p {
                let (lo, hi, th) = (prior_lo[(i, j)], prior_hi[(i, j)], theta_hat0[(i, j)]);
                if !(lo <= hi) {
                    return Err(Error::Config(format!("empty prior interval at ({i}, {j})")));
                }
                if !(lo <= th && th <= hi) {
                    return Err(Error::Config(format!(
                        "initial estimate {th} outside prior [{lo}, {hi}] at ({i}, {j})"
                    )));
                }
            }
        }
        let mut diam = &prior_hi - &prior_lo;
        for (i, &on) in estimated_rows.iter().enumerate() {
            if !on {
                diam.row_mut(i).fill(0.0);
            }
        }
        let mut est = Self {
            theta_hat: theta_hat0,
            prior_lo,
            prior_hi,
            bound: DMatrix::zeros(n, p),
            diam,
            gamma,
            r,
            kappa_sq_integral: 0.0,
            kappa_sq: 0.0,
            estimated_rows,
        };
        est.refresh_bound();
        Ok(est)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.theta_hat.shape()
    }

    fn refresh_bound(&mut self) {
        let (gamma, r, integral) = (self.gamma, self.r, self.kappa_sq_integral);
        self.bound = self.diam.map(|d| worst_case_bound(d, gamma, r, integral));
    }

    /// Element-wise time derivative of the current envelope.
    pub fn bound_rates(&self) -> DMatrix<f64> {
        let (gamma, r, k2, integral) = (self.gamma, self.r, self.kappa_sq, self.kappa_sq_integral);
        self.diam.map(|d| bound_rate(d, gamma, r, k2, integral))
    }

    /// One explicit-Euler step of the adaptation law.
    pub fn update(&mut self, reg: &ExtendedRegression, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!(
                "estimator dt must be positive, got {dt}"
            )));
        }
        let (n, p) = self.shape();
        check_dim("mixed regression rows", p, reg.mixed_x.nrows())?;
        check_dim("mixed regression columns", n, reg.mixed_x.ncols())?;
        let delta = reg.delta;
        if !delta.is_finite() {
            return Err(Error::Signal(format!("non-finite excitation δ = {delta}")));
        }
        if reg.mixed_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Signal("non-finite mixed regression".into()));
        }
        if delta != 0.0 {
            let step = dt * self.gamma * delta;
            for i in (0..n).filter(|&i| self.estimated_rows[i]) {
                for j in 0..p {
                    let residual = reg.mixed_x[(j, i)] - delta * self.theta_hat[(i, j)];
                    self.theta_hat[(i, j)] += step * signed_pow(residual, self.r);
                }
            }
        }
        self.kappa_sq = delta.abs().powf(1.0 + self.r);
        self.kappa_sq_integral += dt * self.kappa_sq;
        self.refresh_bound();
        Ok(())
    }

    /// Largest absolute error against a known `θ` over the estimated rows.
    pub fn max_error(&self, theta: &DMatrix<f64>) -> f64 {
        (&self.theta_hat - theta).abs().max()
    }
}

/// Value-returning form of [`EstimatorState::update`].
pub fn drem_step(
    est: &EstimatorState,
    reg: &ExtendedRegression,
    dt: f64,
) -> Result<EstimatorState> {
    let mut next = est.clone();
    next.update(reg, dt)?;
    Ok(next)
}
