//! Time-indexed record of a closed-loop run and its CSV form.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};

/// Version tag of the trajectory column layout.
pub const TRAJECTORY_SCHEMA: &str = "safeid-trajectory/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Optimal,
    Infeasible,
    /// Barrier gain in `u` vanished; only the box was enforced.
    Degenerate,
    /// Estimation-only sample between control updates.
    Hold,
}

impl RowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowStatus::Optimal => "optimal",
            RowStatus::Infeasible => "infeasible",
            RowStatus::Degenerate => "degenerate",
            RowStatus::Hold => "hold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "optimal" => RowStatus::Optimal,
            "infeasible" => RowStatus::Infeasible,
            "degenerate" => RowStatus::Degenerate,
            "hold" => RowStatus::Hold,
            _ => return None,
        })
    }

    pub fn is_control(&self) -> bool {
        !matches!(self, RowStatus::Hold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub u: Vec<f64>,
    pub barrier: f64,
    pub xi: f64,
    pub psi: f64,
    pub delta: f64,
    pub kappa_sq_integral: f64,
    /// Row-major `n×p`.
    pub theta_hat: Vec<f64>,
    /// Row-major `n×p`.
    pub bound: Vec<f64>,
    pub status: RowStatus,
    /// `"s1"`, `"s2"` or empty on hold rows.
    pub sbound: String,
    pub active_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub state_names: Vec<String>,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub rows: Vec<LogRow>,
    /// Smallest barrier value seen at any integrator sub-step.
    pub min_barrier_substep: f64,
}

impl TrajectoryLog {
    pub fn new(state_names: Vec<String>, m: usize, p: usize) -> Self {
        let n = state_names.len();
        Self {
            state_names,
            m,
            n,
            p,
            rows: Vec::new(),
            min_barrier_substep: f64::INFINITY,
        }
    }

    pub fn control_rows(&self) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(|r| r.status.is_control())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.state_names.iter().cloned());
        h.extend((0..self.m).map(|k| format!("u_ref_{k}")));
        h.extend((0..self.m).map(|k| format!("u_{k}")));
        for name in ["B", "Xi", "psi", "delta", "kappa_sq_int"] {
            h.push(name.into());
        }
        for prefix in ["theta_hat", "bound"] {
            for i in 0..self.n {
                for j in 0..self.p {
                    h.push(format!("{prefix}_{i}_{j}"));
                }
            }
        }
        h.extend(["qp_status", "sbound", "active_set"].map(String::from));
        h
    }

    /// Writes a header row then one line per row. Time has six decimals;
    /// every other number uses the shortest representation that parses back
    /// to the same `f64`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            write!(line, "{:.6}", row.t).unwrap();
            let numbers = row
                .x
                .iter()
                .chain(&row.u_ref)
                .chain(&row.u)
                .chain([
                    &row.barrier,
                    &row.xi,
                    &row.psi,
                    &row.delta,
                    &row.kappa_sq_integral,
                ])
                .chain(&row.theta_hat)
                .chain(&row.bound);
            for v in numbers {
                write!(line, ",{v}").unwrap();
            }
            let active: Vec<String> = row.active_set.iter().map(|k| k.to_string()).collect();
            write!(
                line,
                ",{},{},{}",
                row.status.as_str(),
                row.sbound,
                active.join(";")
            )
            .unwrap();
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parses a file produced by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: BufRead>(input: R, m: usize, p: usize) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty trajectory file".into()))?
            .map_err(|e| Error::Config(e.to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let fixed = 1 + 2 * m + 5 + 3;
        // n + 2·n·p + fixed = cols
        let n = (1..=64)
            .find(|&n| n + 2 * n * p + fixed == cols.len())
            .ok_or_else(|| Error::Config("trajectory header does not match m and p".into()))?;
        let state_names = cols[1..=n].iter().map(|s| s.to_string()).collect();
        let mut log = TrajectoryLog::new(state_names, m, p);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Config(format!(
                    "row {} has {} fields",
                    lineno + 2,
                    f.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number {s:?} on row {}", lineno + 2)))
            };
            let mut it = f.iter();
            let mut take = |k: usize| -> Result<Vec<f64>> {
                (0..k).map(|_| num(it.next().unwrap())).collect()
            };
            let t = take(1)?[0];
            let x = take(n)?;
            let u_ref = take(m)?;
            let u = take(m)?;
            let s = take(5)?;
            let theta_hat = take(n * p)?;
            let bound = take(n * p)?;
            let tail = &f[f.len() - 3..];
            let status = RowStatus::parse(tail[0])
                .ok_or_else(|| Error::Config(format!("bad status {:?}", tail[0])))?;
            let active_set = if tail[2].is_empty() {
                Vec::new()
            } else {
                tail[2]
                    .split(';')
                    .map(|k| {
                        k.parse()
                            .map_err(|_| Error::Config(format!("bad active set {:?}", tail[2])))
                    })
                    .collect::<Result<_>>()?
            };
            log.rows.push(LogRow {
                t,
                x,
                u_ref,
                u,
                barrier: s[0],
                xi: s[1],
                psi: s[2],
                delta: s[3],
                kappa_sq_integral: s[4],
                theta_hat,
                bound,
                status,
                sbound: tail[1].to_string(),
                active_set,
            });
        }
        log.min_barrier_substep = log
            .rows
            .iter()
            .map(|r| r.barrier)
            .fold(f64::INFINITY, f64::min);
        Ok(log)
    }
}
