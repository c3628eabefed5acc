//! Adaptive and robust barrier conditions, assembled as affine inequalities
//! in the control input.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A barrier `B(x)` whose superlevel set `{B ≥ 0}` is the safe set.
pub trait Barrier: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Extended class-K∞ gain used in the decay condition `Ḃ ≥ −α(B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gain", rename_all = "snake_case")]
pub enum ClassK {
    /// `α(s) = c·s`
    Linear(f64),
    /// `α(s) = c·sign(s)·s²`
    SignedQuadratic(f64),
}

impl ClassK {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ClassK::Linear(c) => c * s,
            ClassK::SignedQuadratic(c) => c * s * s.abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = match *self {
            ClassK::Linear(c) | ClassK::SignedQuadratic(c) => c,
        };
        if c > 0.0 && c.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "class-K gain must be positive, got {c}"
            )))
        }
    }
}

impl Default for ClassK {
    fn default() -> Self {
        ClassK::Linear(1.0)
    }
}

/// Which right-hand side the barrier inequality uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// `−α(B)` with the adaptation compensation `ψ`.
    Th1,
    /// Tightened set `B ≥ Ξ`: `−α(B − Ξ) + Σ θ̃ʳ·θ̃̇ʳ`.
    Cor1,
    /// Pointwise minimum of the two.
    #[default]
    Cor2,
    /// `Cor2` tightened by the disturbance margin `‖∇B‖·d̄`.
    Robust,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [
        ConstraintMode::Th1,
        ConstraintMode::Cor1,
        ConstraintMode::Cor2,
        ConstraintMode::Robust,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintMode::Th1 => "th1",
            ConstraintMode::Cor1 => "cor1",
            ConstraintMode::Cor2 => "cor2",
            ConstraintMode::Robust => "robust",
        }
    }

    /// Modes whose invariant set is the tightened `{B ≥ Ξ}`.
    pub fn uses_tightened_set(&self) -> bool {
        !matches!(self, ConstraintMode::Th1)
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "th1" => Ok(ConstraintMode::Th1),
            "cor1" => Ok(ConstraintMode::Cor1),
            "cor2" => Ok(ConstraintMode::Cor2),
            "robust" => Ok(ConstraintMode::Robust),
            other => Err(Error::Config(format!("unknown constraint mode {other:?}"))),
        }
    }
}

#[derive(Clone)]
pub struct BarrierSpec {
    pub barrier: Arc<dyn Barrier>,
    pub alpha: ClassK,
    pub mode: ConstraintMode,
    /// Disturbance bound, only read in [`ConstraintMode::Robust`].
    pub d_bar: f64,
}

impl fmt::Debug for BarrierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BarrierSpec")
            .field("alpha", &self.alpha)
            .field("mode", &self.mode)
            .field("d_bar", &self.d_bar)
            .finish_non_exhaustive()
    }
}

impl BarrierSpec {
    pub fn new(
        barrier: Arc<dyn Barrier>,
        alpha: ClassK,
        mode: ConstraintMode,
        d_bar: f64,
    ) -> Result<Self> {
        alpha.validate()?;
        if !(d_bar >= 0.0) || !d_bar.is_finite() {
            return Err(Error::Config(format!(
                "disturbance bound must be non-negative, got {d_bar}"
            )));
        }
        Ok(Self {
            barrier,
            alpha,
            mode,
            d_bar,
        })
    }

    pub fn with_mode(&self, mode: ConstraintMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// `a·u ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineInequality {
    pub a: DVector<f64>,
    pub b: f64,
}

impl AffineInequality {
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.a.dot(u) - self.b
    }
}

/// Which bound the minimum picked, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SboundChoice {
    S1,
    S2,
}

impl SboundChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SboundChoice::S1 => "s1",
            SboundChoice::S2 => "s2",
        }
    }
}

/// Constraint plus the intermediate quantities that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltConstraint {
    pub inequality: AffineInequality,
    pub barrier_value: f64,
    pub psi: f64,
    pub xi: f64,
    pub rhs: f64,
    pub choice: SboundChoice,
}

/// `ψ = Σᵢⱼ boundᵢⱼ·|∂B/∂xᵢ·Δⱼ|`.
pub fn psi(grad: &DVector<f64>, regressor: &DVector<f64>, bounds: &DMatrix<f64>) -> Result<f64> {
    check_dim("bound rows vs gradient", grad.len(), bounds.nrows())?;
    check_dim(
        "bound columns vs regressor",
        regressor.len(),
        bounds.ncols(),
    )?;
    let mut acc = 0.0;
    for i in 0..bounds.nrows() {
        for j in 0..bounds.ncols() {
            acc += bounds[(i, j)] * (grad[i] * regressor[j]).abs();
        }
    }
    Ok(acc)
}

/// `Ξ = Σᵢⱼ boundᵢⱼ²`.
pub fn xi(bounds: &DMatrix<f64>) -> f64 {
    bounds.iter().map(|b| b * b).sum()
}

pub fn sbound1(barrier_value: f64, alpha: &ClassK) -> f64 {
    -alpha.eval(barrier_value)
}

/// `−α(B − Ξ) + Σᵢⱼ boundᵢⱼ·rateᵢⱼ`.
pub fn sbound2(
    barrier_value: f64,
    xi_value: f64,
    bounds: &DMatrix<f64>,
    rates: &DMatrix<f64>,
    alpha: &ClassK,
) -> Result<f64> {
    check_dim("rate rows", bounds.nrows(), rates.nrows())?;
    check_dim("rate columns", bounds.ncols(), rates.ncols())?;
    let coupling: f64 = bounds.iter().zip(rates.iter()).map(|(b, r)| b * r).sum();
    Ok(-alpha.eval(barrier_value - xi_value) + coupling)
}

/// Right-hand side of the barrier inequality for `mode`.
pub fn mode_rhs(
    mode: ConstraintMode,
    barrier_value: f64,
    grad_norm: f64,
    bounds: &DMatrix<f64>,
    rates: &DMatrix<f64>,
    alpha: &ClassK,
    d_bar: f64,
) -> Result<(f64, SboundChoice)> {
    let s1 = sbound1(barrier_value, alpha);
    let s2 = sbound2(barrier_value, xi(bounds), bounds, rates, alpha)?;
    let min = if s1 <= s2 {
        (s1, SboundChoice::S1)
    } else {
        (s2, SboundChoice::S2)
    };
    Ok(match mode {
        ConstraintMode::Th1 => (s1, SboundChoice::S1),
        ConstraintMode::Cor1 => (s2, SboundChoice::S2),
        ConstraintMode::Cor2 => min,
        // the margin tightens: worst-case d lowers Ḃ by at most ‖∇B‖·d̄
        ConstraintMode::Robust => (min.0 + grad_norm * d_bar, min.1),
    })
}

/// Assembles `a·u ≥ b` with `a = ∇Bᵀg(x)` and
/// `b = RHS − ∇Bᵀf(x) − ∇Bᵀθ̂Δ(x) + ψ`.
#[allow(clippy::too_many_arguments)]
pub fn build_constraint(
    spec: &BarrierSpec,
    x: &DVector<f64>,
    f_x: &DVector<f64>,
    g_x: &DMatrix<f64>,
    regressor: &DVector<f64>,
    theta_hat: &DMatrix<f64>,
    bounds: &DMatrix<f64>,
    rates: &DMatrix<f64>,
) -> Result<BuiltConstraint> {
    let n = x.len();
    check_dim("drift length", n, f_x.len())?;
    check_dim("input matrix rows", n, g_x.nrows())?;
    check_dim("estimate rows", n, theta_hat.nrows())?;
    check_dim("estimate columns", regressor.len(), theta_hat.ncols())?;
    check_dim("bound shape", theta_hat.len(), bounds.len())?;

    let value = spec.barrier.value(x);
    let grad = spec.barrier.gradient(x);
    check_dim("barrier gradient length", n, grad.len())?;

    let psi_value = psi(&grad, regressor, bounds)?;
    let xi_value = xi(bounds);
    let (rhs, choice) = mode_rhs(
        spec.mode,
        value,
        grad.norm(),
        bounds,
        rates,
        &spec.alpha,
        spec.d_bar,
    )?;

    let a = g_x.transpose() * &grad;
    let drift = grad.dot(f_x) + grad.dot(&(theta_hat * regressor));
    let b = rhs - drift + psi_value;
    if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Signal("non-finite barrier constraint".into()));
    }
    if a.iter().all(|&v| v == 0.0) && b > 0.0 {
        return Err(Error::InfeasibleInInput { b });
    }
    Ok(BuiltConstraint {
        inequality: AffineInequality { a, b },
        barrier_value: value,
        psi: psi_value,
        xi: xi_value,
        rhs,
        choice,
    })
}
