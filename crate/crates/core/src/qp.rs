//! Point-wise safety filter: Euclidean projection of a reference input onto
//! the intersection of affine barrier inequalities and an input box.
//!
//! The solver is a dual active-set method (Goldfarb–Idnani with identity
//! Hessian). It starts from the unconstrained minimizer `u_ref`, repeatedly
//! adds the lowest-indexed violated constraint and drops blocking ones, and
//! reports infeasibility when a violated constraint is a non-negative
//! combination of active normals pointing the wrong way.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::safety::AffineInequality;

pub const MAX_INPUT_DIM: usize = 8;
pub const MAX_INEQUALITIES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub u_ref: DVector<f64>,
    pub inequalities: Vec<AffineInequality>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

/// Solver output. Constraint indices follow [`QpProblem::constraint_rows`]:
/// inequalities first, then lower bounds `u_i ≥ lo_i`, then upper bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub active_set: Vec<usize>,
    /// One multiplier per constraint row, zero for inactive rows.
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
}

impl QpProblem {
    pub fn new(
        u_ref: DVector<f64>,
        inequalities: Vec<AffineInequality>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Result<Self> {
        let p = Self {
            u_ref,
            inequalities,
            lo,
            hi,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.u_ref.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if m == 0 || m > MAX_INPUT_DIM {
            return Err(Error::Dimension {
                context: "input dimension must lie in 1..=8",
                expected: MAX_INPUT_DIM,
                got: m,
            });
        }
        if self.inequalities.len() > MAX_INEQUALITIES {
            return Err(Error::Dimension {
                context: "at most 16 inequalities",
                expected: MAX_INEQUALITIES,
                got: self.inequalities.len(),
            });
        }
        check_dim("lower bound length", m, self.lo.len())?;
        check_dim("upper bound length", m, self.hi.len())?;
        for ineq in &self.inequalities {
            check_dim("inequality normal length", m, ineq.a.len())?;
            if !ineq.b.is_finite() || ineq.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Signal("non-finite inequality".into()));
            }
        }
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.u_ref) || !finite(&self.lo) || !finite(&self.hi) {
            return Err(Error::Signal("non-finite QP data".into()));
        }
        if self.lo.iter().zip(self.hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::Config("box lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    /// All constraints as rows `cₖ·u ≥ dₖ`.
    pub fn constraint_rows(&self) -> Vec<(DVector<f64>, f64)> {
        let m = self.dim();
        let mut rows: Vec<(DVector<f64>, f64)> = self
            .inequalities
            .iter()
            .map(|c| (c.a.clone(), c.b))
            .collect();
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            rows.push((e, self.lo[i]));
        }
        for i in 0..m {
            let mut e = DVector::zeros(m);
            e[i] = -1.0;
            rows.push((e, -self.hi[i]));
        }
        rows
    }

    /// Largest violation of any constraint at `u` (zero when feasible).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        self.constraint_rows()
            .iter()
            .map(|(c, d)| (d - c.dot(u)).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (u - &self.u_ref).norm_squared()
    }

    /// Sup-norm of the KKT conditions: stationarity, primal and dual
    /// feasibility, complementarity.
    pub fn kkt_residual(&self, sol: &QpSolution) -> f64 {
        let rows = self.constraint_rows();
        let mut grad = &sol.u - &self.u_ref;
        let mut worst: f64 = 0.0;
        for ((c, d), &lam) in rows.iter().zip(&sol.multipliers) {
            grad -= c * lam;
            let slack = c.dot(&sol.u) - d;
            worst = worst.max((-slack).max(0.0));
            worst = worst.max((-lam).max(0.0));
            worst = worst.max((lam * slack).abs());
        }
        worst.max(grad.amax())
    }
}

/// Solves the projection program exactly; deterministic in its inputs.
pub fn solve(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    let m = problem.dim();
    let raw = problem.constraint_rows();

    // unit normals keep the step lengths comparable across rows
    let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::with_capacity(raw.len());
    for (c, d) in &raw {
        let norm = c.norm();
        if norm == 0.0 {
            rows.push((c.clone(), *d, 0.0));
        } else {
            rows.push((c / norm, d / norm, norm));
        }
    }

    let mut u = problem.u_ref.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let infeasible = |u: DVector<f64>| QpSolution {
        u,
        active_set: Vec::new(),
        multipliers: vec![0.0; raw.len()],
        status: QpStatus::Infeasible,
    };

    let max_iter = 50 * (rows.len() + 1) * (m + 1);
    for _ in 0..max_iter {
        // lowest-index violated row enters
        let entering = rows.iter().enumerate().position(|(k, (c, d, norm))| {
            if active.contains(&k) {
                return false;
            }
            if *norm == 0.0 {
                return *d > 0.0;
            }
            c.dot(&u) - d < -feas_tol(*d, &u)
        });
        let Some(p) = entering else {
            let mut multipliers = vec![0.0; raw.len()];
            for (&k, &l) in active.iter().zip(&lambda) {
                multipliers[k] = l / rows[k].2;
            }
            let mut active_set = active.clone();
            active_set.sort_unstable();
            // active box rows hold to round-off; make them exact
            let ni = problem.inequalities.len();
            for &k in &active {
                if k >= ni + m {
                    u[k - ni - m] = problem.hi[k - ni - m];
                } else if k >= ni {
                    u[k - ni] = problem.lo[k - ni];
                }
            }
            return Ok(QpSolution {
                u,
                active_set,
                multipliers,
                status: QpStatus::Optimal,
            });
        };
        if rows[p].2 == 0.0 {
            return Ok(infeasible(u));
        }
        let (cp, dp) = (rows[p].0.clone(), rows[p].1);
        let mut lambda_p = 0.0;

        loop {
            let (z, r) = split_direction(&rows, &active, &cp);
            // largest dual step before an active multiplier hits zero
            let mut t1 = f64::INFINITY;
            let mut blocking = None;
            for (idx, (&rj, &lj)) in r.iter().zip(&lambda).enumerate() {
                if rj > 1e-14 {
                    let ratio = lj / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        blocking = Some(idx);
                    }
                }
            }
            let z_small = z.norm() <= 1e-11;
            if z_small {
                let Some(idx) = blocking else {
                    return Ok(infeasible(u));
                };
                for (l, rj) in lambda.iter_mut().zip(r.iter()) {
                    *l -= t1 * rj;
                }
                lambda_p += t1;
                active.remove(idx);
                lambda.remove(idx);
                continue;
            }
            let slack = cp.dot(&u) - dp;
            let t2 = -slack / z.dot(&cp);
            let t = t1.min(t2);
            u += &z * t;
            for (l, rj) in lambda.iter_mut().zip(r.iter()) {
                *l -= t * rj;
            }
            lambda_p += t;
            if t2 <= t1 {
                active.push(p);
                lambda.push(lambda_p);
                break;
            }
            let idx = blocking.expect("finite partial step has a blocking row");
            active.remove(idx);
            lambda.remove(idx);
        }
    }
    Err(Error::Signal(
        "QP active-set iteration limit reached".into(),
    ))
}

fn feas_tol(d: f64, u: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + d.abs() + u.amax())
}

/// Splits `c` into the component `z` orthogonal to the active normals and
/// the coefficients `r` of its projection onto them.
fn split_direction(
    rows: &[(DVector<f64>, f64, f64)],
    active: &[usize],
    c: &DVector<f64>,
) -> (DVector<f64>, Vec<f64>) {
    if active.is_empty() {
        return (c.clone(), Vec::new());
    }
    let m = c.len();
    let mut n = DMatrix::zeros(m, active.len());
    for (col, &k) in active.iter().enumerate() {
        n.column_mut(col).copy_from(&rows[k].0);
    }
    let qr = n.clone().qr();
    let q = qr.q();
    let rmat = qr.r();
    let qtc = q.transpose() * c;
    let r = rmat
        .solve_upper_triangular(&qtc)
        .unwrap_or_else(|| DVector::zeros(active.len()));
    let z = c - &n * &r;
    (z, r.iter().copied().collect())
}

/// Input used when the program is infeasible: the box vertex (or clamped
/// reference) with the smallest total barrier violation, ties broken by
/// distance to `u_ref`.
pub fn fallback_input(problem: &QpProblem) -> DVector<f64> {
    let m = problem.dim();
    let clamp = DVector::from_iterator(
        m,
        (0..m).map(|i| problem.u_ref[i].clamp(problem.lo[i], problem.hi[i])),
    );
    let violation = |u: &DVector<f64>| -> f64 {
        problem
            .inequalities
            .iter()
            .map(|c| (c.b - c.a.dot(u)).max(0.0))
            .sum()
    };
    let mut best = clamp.clone();
    let mut best_key = (violation(&clamp), problem.objective(&clamp));
    for mask in 0..(1usize << m) {
        let v = DVector::from_iterator(
            m,
            (0..m).map(|i| {
                if mask >> i & 1 == 1 {
                    problem.hi[i]
                } else {
                    problem.lo[i]
                }
            }),
        );
        let key = (violation(&v), problem.objective(&v));
        if key < best_key {
            best = v;
            best_key = key;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn ineq(a: &[f64], b: f64) -> AffineInequality {
        AffineInequality { a: v(a), b }
    }

    #[test]
    fn unconstrained_interior_reference() {
        let p = QpProblem::new(v(&[1.0, -2.0]), vec![], v(&[-5.0, -5.0]), v(&[5.0, 5.0])).unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.u, p.u_ref);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn single_halfspace() {
        let p =
            QpProblem::new(v(&[2.0]), vec![ineq(&[1.0], 3.0)], v(&[-10.0]), v(&[10.0])).unwrap();
        let s = solve(&p).unwrap();
        assert_relative_eq!(s.u[0], 3.0, epsilon = 1e-12);
        assert_eq!(s.active_set, vec![0]);
        assert!(p.kkt_residual(&s) <= 1e-9);
    }

    #[test]
    fn diagonal_halfspace() {
        let p = QpProblem::new(
            v(&[1.0, 1.0]),
            vec![ineq(&[1.0, 1.0], 3.0)],
            v(&[-10.0, -10.0]),
            v(&[10.0, 10.0]),
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_relative_eq!(s.u[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(s.u[1], 1.5, epsilon = 1e-12);
        assert_relative_eq!(s.multipliers[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn box_clamps_reference() {
        let p =
            QpProblem::new(v(&[20.0, -20.0]), vec![], v(&[-1.0, -1.0]), v(&[1.0, 1.0])).unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.u, v(&[1.0, -1.0]));
        assert_eq!(s.active_set, vec![1, 2]);
    }

    #[test]
    fn halfspace_and_box_interact() {
        // u1 + u2 ≥ 3 with u2 ≤ 1 pushes u1 to 2
        let p = QpProblem::new(
            v(&[0.0, 0.0]),
            vec![ineq(&[1.0, 1.0], 3.0)],
            v(&[-10.0, -10.0]),
            v(&[10.0, 1.0]),
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_relative_eq!(s.u[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.u[1], 1.0, epsilon = 1e-12);
        assert!(p.kkt_residual(&s) <= 1e-9);
    }

    #[test]
    fn detects_infeasibility() {
        let p =
            QpProblem::new(v(&[0.0]), vec![ineq(&[1.0], 11.0)], v(&[-10.0]), v(&[10.0])).unwrap();
        assert_eq!(solve(&p).unwrap().status, QpStatus::Infeasible);
        let p = QpProblem::new(
            v(&[0.0]),
            vec![ineq(&[1.0], 1.0), ineq(&[-1.0], 1.0)],
            v(&[-10.0]),
            v(&[10.0]),
        )
        .unwrap();
        assert_eq!(solve(&p).unwrap().status, QpStatus::Infeasible);
        let p = QpProblem::new(v(&[0.0]), vec![ineq(&[0.0], 1.0)], v(&[-1.0]), v(&[1.0])).unwrap();
        assert_eq!(solve(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn fallback_minimizes_violation() {
        let p = QpProblem::new(
            v(&[0.0]),
            vec![ineq(&[-1.0], 11.0)],
            v(&[-10.0]),
            v(&[10.0]),
        )
        .unwrap();
        assert_eq!(fallback_input(&p), v(&[-10.0]));
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(QpProblem::new(v(&[]), vec![], v(&[]), v(&[])).is_err());
        assert!(QpProblem::new(v(&[0.0]), vec![], v(&[1.0]), v(&[-1.0])).is_err());
        assert!(QpProblem::new(
            v(&[0.0]),
            vec![ineq(&[1.0, 0.0], 0.0)],
            v(&[-1.0]),
            v(&[1.0])
        )
        .is_err());
        let many = vec![ineq(&[1.0], 0.0); 17];
        assert!(QpProblem::new(v(&[0.0]), many, v(&[-1.0]), v(&[1.0])).is_err());
    }

    #[test]
    fn redundant_parallel_constraints() {
        let p = QpProblem::new(
            v(&[0.0, 0.0]),
            vec![
                ineq(&[1.0, 0.0], 1.0),
                ineq(&[2.0, 0.0], 2.0),
                ineq(&[1.0, 0.0], 0.5),
            ],
            v(&[-5.0, -5.0]),
            v(&[5.0, 5.0]),
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.u[0], 1.0, epsilon = 1e-12);
        assert!(p.kkt_residual(&s) <= 1e-9);
    }
}
