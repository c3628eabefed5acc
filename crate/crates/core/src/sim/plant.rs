use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

/// Known structure of `ẋ = f(x) + g(x)u + θΔ(x) + d`.
///
/// The regressor takes only the state, so every barrier inequality built
/// from it stays affine in `u`.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn regressor_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn regressor(&self, x: &DVector<f64>) -> DVector<f64>;

    fn state_names(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }
}

/// Dynamics paired with a parameter matrix and a disturbance bound.
#[derive(Clone)]
pub struct PlantModel {
    pub dynamics: Arc<dyn ControlAffine>,
    /// `n×p`.
    pub theta: DMatrix<f64>,
    pub d_bar: f64,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("n", &self.n())
            .field("m", &self.m())
            .field("p", &self.p())
            .field("theta", &self.theta)
            .field("d_bar", &self.d_bar)
            .finish()
    }
}

impl PlantModel {
    pub fn new(dynamics: Arc<dyn ControlAffine>, theta: DMatrix<f64>, d_bar: f64) -> Result<Self> {
        check_dim("theta rows", dynamics.state_dim(), theta.nrows())?;
        check_dim("theta columns", dynamics.regressor_dim(), theta.ncols())?;
        if !(d_bar >= 0.0) {
            return Err(Error::Config(format!(
                "disturbance bound must be non-negative, got {d_bar}"
            )));
        }
        Ok(Self {
            dynamics,
            theta,
            d_bar,
        })
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn p(&self) -> usize {
        self.dynamics.regressor_dim()
    }

    /// `f(x) + g(x)u + θΔ(x) + d`.
    pub fn vector_field(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> DVector<f64> {
        let dy = &self.dynamics;
        dy.drift(x) + dy.input_matrix(x) * u + &self.theta * dy.regressor(x) + d
    }
}

/// Classical fourth-order Runge–Kutta step with `u` and `d` held constant.
pub fn rk4_step(
    model: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "integration step must be positive, got {dt}"
        )));
    }
    let fault = |reason: &str, state: &DVector<f64>| Error::SimulationFault {
        t: f64::NAN,
        reason: reason.to_string(),
        state: state.iter().copied().collect(),
    };
    if x.iter()
        .chain(u.iter())
        .chain(d.iter())
        .any(|v| !v.is_finite())
    {
        return Err(fault("non-finite integrator input", x));
    }
    let k1 = model.vector_field(x, u, d);
    let k2 = model.vector_field(&(x + &k1 * (0.5 * dt)), u, d);
    let k3 = model.vector_field(&(x + &k2 * (0.5 * dt)), u, d);
    let k4 = model.vector_field(&(x + &k3 * dt), u, d);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(fault("non-finite derivative", x));
    }
    Ok(next)
}

/// Uniform direction, magnitude uniform on `[0, d_bar]`.
pub fn sample_disturbance<R: Rng + ?Sized>(n: usize, d_bar: f64, rng: &mut R) -> DVector<f64> {
    if d_bar <= 0.0 || n == 0 {
        return DVector::zeros(n);
    }
    let dir = loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let norm: f64 = v.norm();
        if norm > 1e-12 {
            break v / norm;
        }
    };
    let magnitude = d_bar * rng.random::<f64>();
    dir * magnitude
}
