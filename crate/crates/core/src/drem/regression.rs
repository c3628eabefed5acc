//! Linear regression equation from measured transitions, and its
//! extension/mixing into decoupled scalar regressions `𝒳ⱼᵢ = δ·θᵢⱼ`.

use nalgebra::{DMatrix, DVector};

use super::adjugate::adjugate;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::filters::FilterBank;

/// Forms `X = (x⁺ − x)/dt − f(x) − g(x)u` and `z = Δ(x)`.
///
/// The forward difference leaves an `O(dt)` residual in `X`; it is not
/// corrected here and enters the regression as part of the disturbance.
pub fn build_lre(
    x: &DVector<f64>,
    x_next: &DVector<f64>,
    dt: f64,
    u: &DVector<f64>,
    f_x: &DVector<f64>,
    g_x: &DMatrix<f64>,
    regressor: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "LRE sample time must be positive, got {dt}"
        )));
    }
    let n = x.len();
    check_dim("next state length", n, x_next.len())?;
    check_dim("drift length", n, f_x.len())?;
    check_dim("input matrix rows", n, g_x.nrows())?;
    check_dim("input matrix columns", u.len(), g_x.ncols())?;
    check_finite("state", x.as_slice())?;
    check_finite("next state", x_next.as_slice())?;
    check_finite("input", u.as_slice())?;
    check_finite("drift", f_x.as_slice())?;
    check_finite("input matrix", g_x.as_slice())?;
    check_finite("regressor", regressor.as_slice())?;
    let lhs = (x_next - x) / dt - f_x - g_x * u;
    Ok((lhs, regressor.clone()))
}

/// One tick of the extended and mixed regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedRegression {
    /// `q×q`, column `j` is `ℋ(Δⱼ)`.
    pub z_h: DMatrix<f64>,
    /// `q×n`, column `i` is `ℋ(Xᵢ)`.
    pub x_h: DMatrix<f64>,
    pub adj_z: DMatrix<f64>,
    /// `det(Z_H)`.
    pub delta: f64,
    /// `adj(Z_H)·X_H`; entry `(j, i)` regresses `θᵢⱼ` on `δ`.
    pub mixed_x: DMatrix<f64>,
}

impl ExtendedRegression {
    /// Largest `|𝒳ⱼᵢ − δ·θᵢⱼ|` over all entries for a known `θ` (`n×p`).
    pub fn mixing_residual(&self, theta: &DMatrix<f64>) -> f64 {
        let expected = theta.transpose() * self.delta;
        (&self.mixed_x - expected).abs().max()
    }
}

/// Filter banks for every column of `Δ` (`p` banks) and every row of `X`
/// (`n` banks), all sharing the same poles so that the rows of the extended
/// equation stay consistent.
#[derive(Debug, Clone)]
pub struct RegressorExtender {
    regressor_banks: Vec<FilterBank>,
    lhs_banks: Vec<FilterBank>,
}

impl RegressorExtender {
    /// `template` must have `q = p` channels.
    pub fn new(template: &FilterBank, n: usize, p: usize) -> Result<Self> {
        check_dim(
            "filter bank size must equal the regressor dimension",
            p,
            template.len(),
        )?;
        let mut bank = template.clone();
        bank.reset();
        Ok(Self {
            regressor_banks: vec![bank.clone(); p],
            lhs_banks: vec![bank; n],
        })
    }

    pub fn state_dim(&self) -> usize {
        self.lhs_banks.len()
    }

    pub fn regressor_dim(&self) -> usize {
        self.regressor_banks.len()
    }

    /// Steps every bank once and mixes the result with `adj(Z_H)`.
    pub fn extend_and_mix(
        &mut self,
        lhs: &DVector<f64>,
        regressor: &DVector<f64>,
    ) -> Result<ExtendedRegression> {
        let n = self.lhs_banks.len();
        let q = self.regressor_banks.len();
        check_dim("LRE left-hand side length", n, lhs.len())?;
        check_dim("regressor length", q, regressor.len())?;

        let mut z_h = DMatrix::zeros(q, q);
        for (j, bank) in self.regressor_banks.iter_mut().enumerate() {
            let col = bank.apply(regressor[j])?;
            z_h.column_mut(j).copy_from_slice(&col);
        }
        let mut x_h = DMatrix::zeros(q, n);
        for (i, bank) in self.lhs_banks.iter_mut().enumerate() {
            let col = bank.apply(lhs[i])?;
            x_h.column_mut(i).copy_from_slice(&col);
        }
        let adj_z = adjugate(&z_h)?;
        let delta = if q == 1 {
            z_h[(0, 0)]
        } else {
            z_h.determinant()
        };
        let mixed_x = &adj_z * &x_h;
        Ok(ExtendedRegression {
            z_h,
            x_h,
            adj_z,
            delta,
            mixed_x,
        })
    }
}
