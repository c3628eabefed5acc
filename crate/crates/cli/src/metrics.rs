//! Summary statistics derived from a trajectory log alone.

use std::io::{self, BufRead, Write};

use nalgebra::DMatrix;
use safeid::sim::{RowStatus, TrajectoryLog, TRAJECTORY_SCHEMA};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Minimum of `B` over every logged row.
    pub min_b: f64,
    /// Start of the final stretch on which `ψ = 0`; `None` when `ψ > 0`
    /// on the last row.
    pub t_psi_zero: Option<f64>,
    /// First time the envelope is zero for every element.
    pub t_bound_zero: Option<f64>,
    /// Row-major `n×p`.
    pub final_estimates: Vec<f64>,
    pub final_abs_errors: Vec<f64>,
    pub qp_infeasible_count: usize,
    pub degenerate_count: usize,
    pub wall_clock: f64,
    pub n: usize,
    pub p: usize,
}

impl RunMetrics {
    /// `theta_true` is `n×p` in the estimator's coordinates.
    pub fn from_log(log: &TrajectoryLog, theta_true: &DMatrix<f64>, wall_clock: f64) -> Self {
        let min_b = log
            .rows
            .iter()
            .map(|r| r.barrier)
            .fold(f64::INFINITY, f64::min);
        let t_psi_zero = match log.rows.iter().rposition(|r| r.psi != 0.0) {
            None => log.rows.first().map(|r| r.t),
            Some(k) => log.rows.get(k + 1).map(|r| r.t),
        };
        let t_bound_zero = log
            .rows
            .iter()
            .find(|r| r.bound.iter().all(|b| *b == 0.0))
            .map(|r| r.t);
        let final_estimates = log
            .rows
            .last()
            .map(|r| r.theta_hat.clone())
            .unwrap_or_default();
        let truth: Vec<f64> = theta_true.transpose().iter().copied().collect();
        let final_abs_errors = final_estimates
            .iter()
            .zip(&truth)
            .map(|(e, t)| (e - t).abs())
            .collect();
        let count = |s: RowStatus| log.rows.iter().filter(|r| r.status == s).count();
        Self {
            min_b,
            t_psi_zero,
            t_bound_zero,
            final_estimates,
            final_abs_errors,
            qp_infeasible_count: count(RowStatus::Infeasible),
            degenerate_count: count(RowStatus::Degenerate),
            wall_clock,
            n: log.n,
            p: log.p,
        }
    }

    pub fn estimate(&self, i: usize, j: usize) -> f64 {
        self.final_estimates[i * self.p + j]
    }

    pub fn error(&self, i: usize, j: usize) -> f64 {
        self.final_abs_errors[i * self.p + j]
    }

    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| {
            v.map(|t| format!("{t:.6}"))
                .unwrap_or_else(|| "none".into())
        };
        let mut out = vec![
            ("schema".to_string(), TRAJECTORY_SCHEMA.to_string()),
            ("minB".into(), self.min_b.to_string()),
            ("tPsiZero".into(), opt(self.t_psi_zero)),
            ("tBoundZero".into(), opt(self.t_bound_zero)),
            (
                "qpInfeasibleCount".into(),
                self.qp_infeasible_count.to_string(),
            ),
            ("degenerateCount".into(), self.degenerate_count.to_string()),
            ("wallClock".into(), format!("{:.3}", self.wall_clock)),
        ];
        for i in 0..self.n {
            for j in 0..self.p {
                out.push((
                    format!("theta_hat_{i}_{j}"),
                    self.estimate(i, j).to_string(),
                ));
            }
        }
        for i in 0..self.n {
            for j in 0..self.p {
                out.push((format!("abs_error_{i}_{j}"), self.error(i, j).to_string()));
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "key,value")?;
        for (k, v) in self.entries() {
            writeln!(out, "{k},{v}")?;
        }
        Ok(())
    }
}

/// Reads back the `(key, value)` pairs of a metrics file.
pub fn read_metrics_csv<R: BufRead>(input: R) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CliError::Parse {
            path: None,
            message: e.to_string(),
        })?;
        if k == 0 {
            continue;
        }
        let (key, value) = line.split_once(',').ok_or_else(|| CliError::Parse {
            path: None,
            message: format!("metrics line {} has no comma", k + 1),
        })?;
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}
