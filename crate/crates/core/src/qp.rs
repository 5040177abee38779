//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + f' x
//!     subject to  G x <= h,   lb <= x <= ub
//! ```
//!
//! with a dual active-set method in the Goldfarb-Idnani family: start at the
//! optimum of an initial working set, repeatedly pick the most violated
//! constraint and drive its violation to zero along a path that preserves the
//! working-set optimality conditions, dropping constraints whose multipliers
//! hit zero on the way. Terminations are exact and there are no penalty
//! parameters to tune. Every step re-solves the working-set KKT system by
//! dense LU, which is more than fast enough at this problem scale.
//!
//! Problems whose cost is linear along some variables (L1 slack formulations)
//! should be solved through [`solve_qp_warm`] with the slack bound rows as
//! the initial working set; the cold start would otherwise begin at the
//! meaningless unconstrained minimizer of a nearly singular Hessian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Smallest Hessian shift attempted when the Cholesky test fails.
const BASE_REGULARIZATION: f64 = 1e-9;
/// Threshold below which a direction derivative counts as zero.
const DIRECTION_TOL: f64 = 1e-12;

/// Dense convex QP in standard inequality form.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQP {
    /// Symmetric positive semidefinite cost matrix, n x n.
    pub hessian: DMatrix<f64>,
    /// Linear cost term, length n.
    pub linear: DVector<f64>,
    /// Inequality matrix G (m x n) for constraints G x <= h.
    pub ineq: DMatrix<f64>,
    /// Inequality right-hand side h, length m.
    pub ineq_rhs: DVector<f64>,
    /// Optional lower bounds; entries of -inf disable individual bounds.
    pub lower: Option<DVector<f64>>,
    /// Optional upper bounds; entries of +inf disable individual bounds.
    pub upper: Option<DVector<f64>>,
}

impl DenseQP {
    /// Unconstrained problem; add constraints by filling the public fields.
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            ineq: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: None,
            upper: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * x).dot(x) + self.linear.dot(x)
    }

    /// Check the structural invariants: square symmetric Hessian (1e-10),
    /// consistent dimensions, lb <= ub where both are finite.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.hessian.nrows(),
                self.hessian.ncols()
            ));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-10 {
                    return Err(format!("hessian not symmetric at ({i}, {j})"));
                }
            }
        }
        if self.ineq.ncols() != n && self.num_ineq() != 0 {
            return Err(format!(
                "inequality matrix has {} columns, expected {n}",
                self.ineq.ncols()
            ));
        }
        if self.ineq.nrows() != self.num_ineq() {
            return Err(format!(
                "{} inequality rows but {} right-hand sides",
                self.ineq.nrows(),
                self.num_ineq()
            ));
        }
        for bound in [&self.lower, &self.upper].into_iter().flatten() {
            if bound.len() != n {
                return Err(format!("bound vector length {} != {n}", bound.len()));
            }
        }
        if let (Some(lower), Some(upper)) = (&self.lower, &self.upper) {
            for i in 0..n {
                if lower[i].is_finite() && upper[i].is_finite() && lower[i] > upper[i] {
                    return Err(format!("lower[{i}] > upper[{i}]"));
                }
            }
        }
        Ok(())
    }

    /// All constraints as rows `g x <= h`: the inequality rows first, then a
    /// row `-x_i <= -lb_i` for each finite lower bound in index order, then
    /// `x_i <= ub_i` for each finite upper bound. Dual vectors and
    /// working-set indices refer to this ordering.
    pub fn expanded(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let m = self.num_ineq();
        let lowers: Vec<usize> = match &self.lower {
            Some(lb) => (0..n).filter(|&i| lb[i].is_finite()).collect(),
            None => Vec::new(),
        };
        let uppers: Vec<usize> = match &self.upper {
            Some(ub) => (0..n).filter(|&i| ub[i].is_finite()).collect(),
            None => Vec::new(),
        };
        let total = m + lowers.len() + uppers.len();
        let mut rows = DMatrix::zeros(total, n);
        let mut rhs = DVector::zeros(total);
        rows.view_mut((0, 0), (m, n)).copy_from(&self.ineq);
        rhs.rows_mut(0, m).copy_from(&self.ineq_rhs);
        for (r, &i) in lowers.iter().enumerate() {
            rows[(m + r, i)] = -1.0;
            rhs[m + r] = -self.lower.as_ref().unwrap()[i];
        }
        let off = m + lowers.len();
        for (r, &i) in uppers.iter().enumerate() {
            rows[(off + r, i)] = 1.0;
            rhs[off + r] = self.upper.as_ref().unwrap()[i];
        }
        (rows, rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub x: DVector<f64>,
    /// Multipliers of the expanded constraint rows (see [`DenseQP::expanded`]).
    pub duals: DVector<f64>,
    pub status: QPStatus,
    pub kkt_residual: f64,
    /// Constraint additions plus drops performed.
    pub iterations: usize,
    /// Tikhonov shift added to the Hessian, 0 when none was needed.
    pub regularization: f64,
    /// Objective value after the initial point and after every constraint
    /// addition; nondecreasing for this dual method.
    pub objective_trace: Vec<f64>,
}

/// Max over the four KKT residuals of `(x, duals)`: stationarity
/// `|Hx + f + G'duals|_inf`, primal feasibility `max(Gx - h, 0)`, dual
/// nonnegativity `max(-duals, 0)`, and complementarity `|duals_i (Gx-h)_i|`.
pub fn kkt_residual(qp: &DenseQP, x: &DVector<f64>, duals: &DVector<f64>) -> f64 {
    let (rows, rhs) = qp.expanded();
    assert_eq!(
        duals.len(),
        rows.nrows(),
        "dual vector must match the expanded constraint rows"
    );
    let stationarity = (&qp.hessian * x + &qp.linear + rows.transpose() * duals)
        .amax();
    let slack = &rows * x - &rhs;
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..slack.len() {
        primal = primal.max(slack[i]);
        dual = dual.max(-duals[i]);
        complementarity = complementarity.max((duals[i] * slack[i]).abs());
    }
    stationarity.max(primal.max(0.0)).max(dual.max(0.0)).max(complementarity)
}

/// Solve with an empty initial working set. See [`solve_qp_warm`].
pub fn solve_qp(qp: &DenseQP, tol_kkt: f64, max_iter: usize) -> QPSolution {
    solve_qp_warm(qp, tol_kkt, max_iter, &[])
}

/// Solve the QP starting from the working set `initial_active` (indices into
/// the expanded rows). The hint is repaired if it is rank-deficient or dual
/// infeasible, so any subset of row indices is acceptable.
pub fn solve_qp_warm(
    qp: &DenseQP,
    tol_kkt: f64,
    max_iter: usize,
    initial_active: &[usize],
) -> QPSolution {
    qp.validate().expect("invalid QP");
    let n = qp.num_vars();
    let (rows, rhs) = qp.expanded();
    let m = rows.nrows();

    // Positive definiteness test; shift if the SCP layer handed us a
    // semidefinite Hessian.
    let mut hess = qp.hessian.clone();
    let mut regularization = 0.0;
    {
        let mut shift = BASE_REGULARIZATION;
        while nalgebra::Cholesky::new(hess.clone()).is_none() && shift <= 1e-3 {
            hess = qp.hessian.clone();
            for i in 0..n {
                hess[(i, i)] += shift;
            }
            regularization = shift;
            shift *= 10.0;
        }
    }

    let mut active: Vec<usize> = {
        let mut a: Vec<usize> = initial_active.iter().copied().filter(|&i| i < m).collect();
        a.sort_unstable();
        a.dedup();
        a
    };

    let mut iterations = 0usize;
    let solved = solve_eqp(&hess, &qp.linear, &rows, &rhs, &active).or_else(|| {
        active.clear();
        solve_eqp(&hess, &qp.linear, &rows, &rhs, &active)
    });
    let (mut x, mut active_duals) = match solved {
        Some(sol) => sol,
        None => {
            // Hessian too broken even after the shift; report and bail.
            let x = DVector::zeros(n);
            let duals = DVector::zeros(m);
            let residual = kkt_residual(qp, &x, &duals);
            return QPSolution {
                x,
                duals,
                status: QPStatus::MaxIter,
                kkt_residual: residual,
                iterations: 0,
                regularization,
                objective_trace: Vec::new(),
            };
        }
    };

    // Repair a dual-infeasible hint by dropping negative multipliers.
    loop {
        let worst = (0..active.len())
            .filter(|&j| active_duals[j] < -DIRECTION_TOL)
            .min_by(|&a, &b| {
                active_duals[a]
                    .partial_cmp(&active_duals[b])
                    .unwrap()
                    .then(active[a].cmp(&active[b]))
            });
        let Some(j) = worst else { break };
        active.remove(j);
        iterations += 1;
        match solve_eqp(&hess, &qp.linear, &rows, &rhs, &active) {
            Some((nx, nd)) => {
                x = nx;
                active_duals = nd;
            }
            None => {
                active.clear();
                let (nx, nd) = solve_eqp(&hess, &qp.linear, &rows, &rhs, &active)
                    .expect("unconstrained solve cannot fail after regularization");
                x = nx;
                active_duals = nd;
            }
        }
    }
    let mut active_duals: Vec<f64> = active_duals.iter().copied().collect();

    let mut status = QPStatus::MaxIter;
    let mut objective_trace = vec![qp.objective(&x)];

    'outer: while iterations < max_iter {
        // Most violated constraint; ties go to the lowest index.
        let mut candidate: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let violation = rows.row(i).transpose().dot(&x) - rhs[i];
            if violation > tol_kkt && candidate.map_or(true, |(_, v)| violation > v) {
                candidate = Some((i, violation));
            }
        }
        let Some((entering, _)) = candidate else {
            status = QPStatus::Optimal;
            break;
        };
        let entering_row = rows.row(entering).transpose();
        let mut entering_dual = 0.0;

        loop {
            if iterations >= max_iter {
                break 'outer;
            }
            iterations += 1;

            let violation = entering_row.dot(&x) - rhs[entering];
            if violation <= tol_kkt {
                // Dropped constraints released enough slack already.
                break;
            }
            let Some((dx, du)) = solve_direction(&hess, &rows, &active, &entering_row) else {
                break 'outer;
            };
            let descent = entering_row.dot(&dx);
            let full_step = if descent > DIRECTION_TOL {
                Some(violation / descent)
            } else {
                None
            };
            // First working-set multiplier driven to zero, lowest index on ties.
            let mut blocking: Option<(f64, usize)> = None;
            for j in 0..active.len() {
                if du[j] > DIRECTION_TOL {
                    let step = active_duals[j] / du[j];
                    let better = match blocking {
                        None => true,
                        Some((best, bj)) => {
                            step < best || (step == best && active[j] < active[bj])
                        }
                    };
                    if better {
                        blocking = Some((step, j));
                    }
                }
            }

            match (full_step, blocking) {
                (None, None) => {
                    // Dual ray: the violated constraint cannot be satisfied.
                    status = QPStatus::Infeasible;
                    break 'outer;
                }
                _ => {
                    let alpha_full = full_step.unwrap_or(f64::INFINITY);
                    let alpha_block = blocking.map_or(f64::INFINITY, |(a, _)| a);
                    let alpha = alpha_full.min(alpha_block).max(0.0);
                    x -= dx.scale(alpha);
                    for j in 0..active.len() {
                        active_duals[j] -= alpha * du[j];
                    }
                    entering_dual += alpha;
                    if alpha_block < alpha_full {
                        let (_, j) = blocking.unwrap();
                        active.remove(j);
                        active_duals.remove(j);
                    } else {
                        active.push(entering);
                        active_duals.push(entering_dual);
                        objective_trace.push(qp.objective(&x));
                        break;
                    }
                }
            }
        }
    }

    let mut duals = DVector::zeros(m);
    for (j, &i) in active.iter().enumerate() {
        duals[i] = active_duals[j].max(0.0);
    }
    let residual = kkt_residual(qp, &x, &duals);
    if status == QPStatus::Optimal && residual > tol_kkt {
        status = QPStatus::MaxIter;
    }
    QPSolution {
        x,
        duals,
        status,
        kkt_residual: residual,
        iterations,
        regularization,
        objective_trace,
    }
}

/// Optimum of the equality-constrained problem over the working set:
/// `[H A'; A 0] [x; duals] = [-f; h_A]`. None when the KKT system is singular.
fn solve_eqp(
    hess: &DMatrix<f64>,
    linear: &DVector<f64>,
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = linear.len();
    let a = active.len();
    let mut kkt = DMatrix::zeros(n + a, n + a);
    kkt.view_mut((0, 0), (n, n)).copy_from(hess);
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = rows[(i, c)];
            kkt[(c, n + j)] = rows[(i, c)];
        }
    }
    let mut b = DVector::zeros(n + a);
    for c in 0..n {
        b[c] = -linear[c];
    }
    for (j, &i) in active.iter().enumerate() {
        b[n + j] = rhs[i];
    }
    let sol = kkt.lu().solve(&b)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into(), sol.rows(n, a).into()))
}

/// Step direction for driving the entering constraint: solve
/// `[H A'; A 0] [dx; du] = [g_entering; 0]`; moving `x - alpha dx` keeps the
/// working set active, lowers the entering violation at rate `g'dx`, and
/// changes the working-set multipliers by `-alpha du`.
fn solve_direction(
    hess: &DMatrix<f64>,
    rows: &DMatrix<f64>,
    active: &[usize],
    entering_row: &DVector<f64>,
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = entering_row.len();
    let a = active.len();
    let mut kkt = DMatrix::zeros(n + a, n + a);
    kkt.view_mut((0, 0), (n, n)).copy_from(hess);
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = rows[(i, c)];
            kkt[(c, n + j)] = rows[(i, c)];
        }
    }
    let mut b = DVector::zeros(n + a);
    b.rows_mut(0, n).copy_from(entering_row);
    let sol = kkt.lu().solve(&b)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into(), sol.rows(n, a).iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = DenseQP::unconstrained(DMatrix::identity(3, 3), vec(&[-1.0, -2.0, 3.0]));
        let sol = solve_qp(&qp, 1e-8, 50);
        assert_eq!(sol.status, QPStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() <= 1e-12);
        assert!((sol.x[1] - 2.0).abs() <= 1e-12);
        assert!((sol.x[2] + 3.0).abs() <= 1e-12);
        assert!(sol.kkt_residual <= 1e-12);
    }

    #[test]
    fn one_dimensional_active_constraint() {
        // minimize 1/2 x^2 subject to x >= 1.
        let mut qp = DenseQP::unconstrained(DMatrix::identity(1, 1), vec(&[0.0]));
        qp.ineq = DMatrix::from_row_slice(1, 1, &[-1.0]);
        qp.ineq_rhs = vec(&[-1.0]);
        let sol = solve_qp(&qp, 1e-8, 50);
        assert_eq!(sol.status, QPStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() <= 1e-12);
        assert!((sol.duals[0] - 1.0).abs() <= 1e-12);
        assert!(sol.kkt_residual <= 1e-12);
    }

    #[test]
    fn exact_kkt_pair_has_tiny_residual() {
        let mut qp = DenseQP::unconstrained(DMatrix::identity(1, 1), vec(&[0.0]));
        qp.ineq = DMatrix::from_row_slice(1, 1, &[-1.0]);
        qp.ineq_rhs = vec(&[-1.0]);
        assert!(kkt_residual(&qp, &vec(&[1.0]), &vec(&[1.0])) <= 1e-12);

        let free = DenseQP::unconstrained(DMatrix::identity(2, 2), vec(&[-0.3, 0.7]));
        assert_eq!(
            kkt_residual(&free, &vec(&[0.3, -0.7]), &DVector::zeros(0)),
            0.0
        );
    }

    #[test]
    fn perturbed_optimum_residual_grows_linearly() {
        let mut qp = DenseQP::unconstrained(DMatrix::identity(2, 2), vec(&[-1.0, -1.0]));
        qp.ineq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        qp.ineq_rhs = vec(&[1.0]);
        let sol = solve_qp(&qp, 1e-8, 50);
        assert_eq!(sol.status, QPStatus::Optimal);
        let r0 = kkt_residual(&qp, &sol.x, &sol.duals);
        let mut residuals = Vec::new();
        for eps in [1e-6, 1e-5, 1e-4] {
            let mut x = sol.x.clone();
            x[0] += eps;
            residuals.push(kkt_residual(&qp, &x, &sol.duals));
        }
        // Stationarity grows proportionally to the perturbation.
        assert!(residuals[0] > r0);
        let ratio10 = residuals[1] / residuals[0];
        let ratio100 = residuals[2] / residuals[0];
        assert!((ratio10 - 10.0).abs() < 1.0, "ratio {ratio10}");
        assert!((ratio100 - 100.0).abs() < 10.0, "ratio {ratio100}");
    }

    #[test]
    fn detects_infeasible_constraints() {
        // x <= 0 and x >= 1 cannot both hold.
        let mut qp = DenseQP::unconstrained(DMatrix::identity(1, 1), vec(&[0.0]));
        qp.ineq = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        qp.ineq_rhs = vec(&[0.0, -1.0]);
        let sol = solve_qp(&qp, 1e-8, 50);
        assert_eq!(sol.status, QPStatus::Infeasible);
    }

    #[test]
    fn bounds_expand_after_inequalities() {
        let mut qp = DenseQP::unconstrained(DMatrix::identity(2, 2), vec(&[0.0, 0.0]));
        qp.ineq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        qp.ineq_rhs = vec(&[5.0]);
        qp.lower = Some(vec(&[0.5, f64::NEG_INFINITY]));
        qp.upper = Some(vec(&[2.0, 1.5]));
        let (rows, rhs) = qp.expanded();
        assert_eq!(rows.nrows(), 3);
        assert_eq!(rows[(1, 0)], -1.0);
        assert_eq!(rhs[1], -0.5);
        assert_eq!(rows[(2, 1)], 1.0);
        assert_eq!(rhs[2], 1.5);

        let sol = solve_qp(&qp, 1e-8, 50);
        assert_eq!(sol.status, QPStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() <= 1e-12);
        assert!(sol.x[1].abs() <= 1e-12);
    }

    #[test]
    fn semidefinite_hessian_gets_regularized() {
        // Second variable has zero curvature and positive linear cost, held
        // in place by its bounds; mirrors the slack block of the SCP layer.
        let mut hess = DMatrix::zeros(2, 2);
        hess[(0, 0)] = 1.0;
        let mut qp = DenseQP::unconstrained(hess, vec(&[-2.0, 1.0]));
        qp.lower = Some(vec(&[f64::NEG_INFINITY, 0.0]));
        let sol = solve_qp_warm(&qp, 1e-8, 50, &[0]);
        assert_eq!(sol.status, QPStatus::Optimal);
        assert!(sol.regularization > 0.0);
        assert!((sol.x[0] - 2.0).abs() <= 1e-6);
        assert!(sol.x[1].abs() <= 1e-6);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let mut qp = DenseQP::unconstrained(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            vec(&[-1.0, -4.0]),
        );
        qp.ineq = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 2.0]);
        qp.ineq_rhs = vec(&[1.0, 3.0]);
        let cold = solve_qp(&qp, 1e-10, 100);
        let warm = solve_qp_warm(&qp, 1e-10, 100, &[1, 0]);
        assert_eq!(cold.status, QPStatus::Optimal);
        assert_eq!(warm.status, QPStatus::Optimal);
        assert!((&cold.x - &warm.x).amax() <= 1e-9);
    }

    #[test]
    fn objective_trace_is_nondecreasing() {
        let mut qp = DenseQP::unconstrained(
            DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.1]),
            vec(&[0.3, -0.9]),
        );
        qp.ineq = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        qp.ineq_rhs = vec(&[-0.5, -0.5, -2.0]);
        let sol = solve_qp(&qp, 1e-8, 100);
        assert_eq!(sol.status, QPStatus::Optimal);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "trace decreased: {:?}", sol.objective_trace);
        }
    }
}
