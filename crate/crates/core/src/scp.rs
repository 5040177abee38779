//! Sequential convex programming over trajectories.
//!
//! The trajectory problem is nonconvex only through the collision chance
//! constraints. Each iteration replaces them with half-planes linearized at
//! the current iterate ([`crate::reform`]), solves the resulting QP over
//! inputs and L1 slacks, and accepts the step when the true constraint
//! violation of the candidate does not exceed what the linearized model
//! predicted; otherwise the trust region shrinks. Under
//! [`LinearizationPolicy::Iterative`] the half-planes are rebuilt at every
//! accepted iterate, so they rotate with the trajectory as it moves around
//! an obstacle. Under [`LinearizationPolicy::Fixed`] the half-planes from
//! the initial trajectory are kept, which is what produces the head-on
//! local minimum the benchmark demonstrates.
//!
//! Positions are affine in the inputs for both dynamics models, so the QP
//! decision variables are the inputs plus one slack per collision
//! constraint, and the quadratic cost is the exact objective.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{ChanceLevel, Cov2, GaussianDisc, Vec2};
use crate::qp::{solve_qp_warm, DenseQP, QPStatus};
use crate::reform::{
    collision_margin, linearize_collision, linearize_with_direction, LinearizationPolicy,
    LinearizedChanceConstraint,
};

/// Slack allowed when comparing true against model constraint violation in
/// the step acceptance test; covers float noise, not model error.
const ACCEPT_TOL: f64 = 1e-12;

/// Relative tolerance on the input bound check in [`rollout`]; QP solutions
/// sit on the bound up to solver precision.
const INPUT_BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Inputs are velocities: p' = p + dt u.
    SingleIntegrator,
    /// Inputs are accelerations from rest: p' = p + dt v + dt^2/2 u, v' = v + dt u.
    DoubleIntegrator,
}

/// One trajectory optimization instance over a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProblem {
    pub start: Vec2,
    pub goal: Vec2,
    /// Horizon length N; positions are indexed 0..=N.
    pub steps: usize,
    pub dt: f64,
    pub dynamics: Dynamics,
    /// Per-step weight on squared goal distance (Q).
    pub stage_weight: f64,
    /// Per-step weight on squared input magnitude (R).
    pub input_weight: f64,
    /// Terminal weight on squared goal distance (Qf).
    pub terminal_weight: f64,
    /// Componentwise input bound (m/s or m/s^2 depending on dynamics).
    pub input_bound: f64,
    /// One predicted disc per step and obstacle; each sequence has N+1 entries.
    pub obstacles: Vec<Vec<GaussianDisc>>,
    pub robot_radius: f64,
    pub robot_cov: Cov2,
    pub delta: ChanceLevel,
}

impl TrajectoryProblem {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidProblem("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidProblem(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.input_bound > 0.0) || !self.input_bound.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "input bound must be positive, got {}",
                self.input_bound
            )));
        }
        for (name, w) in [
            ("stage weight", self.stage_weight),
            ("input weight", self.input_weight),
            ("terminal weight", self.terminal_weight),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidProblem(format!("{name} must be nonnegative, got {w}")));
            }
        }
        if !self.start.is_finite() || !self.goal.is_finite() {
            return Err(Error::InvalidProblem("start and goal must be finite".into()));
        }
        if !(self.robot_radius >= 0.0) || !self.robot_radius.is_finite() {
            return Err(Error::InvalidRadius(self.robot_radius).into());
        }
        for (i, seq) in self.obstacles.iter().enumerate() {
            if seq.len() != self.steps + 1 {
                return Err(Error::InvalidProblem(format!(
                    "obstacle {i} has {} predicted steps, expected {}",
                    seq.len(),
                    self.steps + 1
                )));
            }
        }
        Ok(())
    }

    /// Coefficient matrix of the affine position map: row k, column j holds
    /// the scalar multiplying input j (identically on x and y) in position k,
    /// so `p_k = start + sum_j coeff[(k, j)] * u_j`.
    pub fn position_input_coefficients(&self) -> DMatrix<f64> {
        let n = self.steps;
        let mut coeff = DMatrix::zeros(n + 1, n);
        for k in 1..=n {
            for j in 0..k {
                coeff[(k, j)] = match self.dynamics {
                    Dynamics::SingleIntegrator => self.dt,
                    Dynamics::DoubleIntegrator => self.dt * self.dt * ((k - j) as f64 - 0.5),
                };
            }
        }
        coeff
    }
}

/// A dynamically consistent trajectory. Positions are always reconstructed
/// from the inputs by [`rollout`]; deserialized values must be re-validated
/// against a problem before use (see `harness::validate_trajectory`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    positions: Vec<Vec2>,
    inputs: Vec<Vec2>,
}

impl Trajectory {
    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn inputs(&self) -> &[Vec2] {
        &self.inputs
    }

    pub fn final_position(&self) -> Vec2 {
        *self.positions.last().expect("trajectory has N+1 >= 2 positions")
    }
}

/// Integrate the discrete dynamics. Rejects inputs that exceed the bound
/// beyond solver precision.
pub fn rollout(problem: &TrajectoryProblem, inputs: &[Vec2]) -> Result<Trajectory> {
    if inputs.len() != problem.steps {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for a {}-step horizon",
            inputs.len(),
            problem.steps
        )));
    }
    let limit = problem.input_bound * (1.0 + INPUT_BOUND_TOL) + INPUT_BOUND_TOL;
    for (index, u) in inputs.iter().enumerate() {
        if !u.is_finite() || u.x.abs() > limit || u.y.abs() > limit {
            return Err(Error::InputBound {
                index,
                x: u.x,
                y: u.y,
                bound: problem.input_bound,
            });
        }
    }
    let mut positions = Vec::with_capacity(problem.steps + 1);
    positions.push(problem.start);
    match problem.dynamics {
        Dynamics::SingleIntegrator => {
            let mut p = problem.start;
            for u in inputs {
                p = p + u.scaled(problem.dt);
                positions.push(p);
            }
        }
        Dynamics::DoubleIntegrator => {
            let dt = problem.dt;
            let mut p = problem.start;
            let mut v = Vec2::ZERO;
            for u in inputs {
                p = p + v.scaled(dt) + u.scaled(0.5 * dt * dt);
                v = v + u.scaled(dt);
                positions.push(p);
            }
        }
    }
    Ok(Trajectory {
        positions,
        inputs: inputs.to_vec(),
    })
}

/// Deterministic initial guess: track the uniform start-to-goal
/// interpolation as closely as the input bound allows.
pub fn straight_line_guess(problem: &TrajectoryProblem) -> Trajectory {
    let n = problem.steps;
    let dt = problem.dt;
    let mut inputs = Vec::with_capacity(n);
    let mut p = problem.start;
    let mut v = Vec2::ZERO;
    let clamp = |value: f64| value.clamp(-problem.input_bound, problem.input_bound);
    for k in 0..n {
        let frac = (k + 1) as f64 / n as f64;
        let target = problem.start + (problem.goal - problem.start).scaled(frac);
        let desired = match problem.dynamics {
            Dynamics::SingleIntegrator => (target - p).scaled(1.0 / dt),
            Dynamics::DoubleIntegrator => {
                (target - p - v.scaled(dt)).scaled(2.0 / (dt * dt))
            }
        };
        let u = Vec2::new(clamp(desired.x), clamp(desired.y));
        match problem.dynamics {
            Dynamics::SingleIntegrator => {
                p = p + u.scaled(dt);
            }
            Dynamics::DoubleIntegrator => {
                p = p + v.scaled(dt) + u.scaled(0.5 * dt * dt);
                v = v + u.scaled(dt);
            }
        }
        inputs.push(u);
    }
    rollout(problem, &inputs).expect("clamped inputs respect the bound")
}

/// Exact objective of a trajectory:
/// sum_{k<N} (Q |p_k - goal|^2 + R |u_k|^2) + Qf |p_N - goal|^2.
pub fn objective(problem: &TrajectoryProblem, trajectory: &Trajectory) -> f64 {
    let goal = problem.goal;
    let mut value = 0.0;
    for k in 0..problem.steps {
        value += problem.stage_weight * (trajectory.positions[k] - goal).norm_squared();
        value += problem.input_weight * trajectory.inputs[k].norm_squared();
    }
    value + problem.terminal_weight * (trajectory.final_position() - goal).norm_squared()
}

/// Per-policy solver options. All tolerances are in meters where they bound
/// geometric quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScpOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the step infinity-norm.
    pub step_tolerance: f64,
    /// Convergence threshold on total slack.
    pub feasibility_tolerance: f64,
    pub trust_initial: f64,
    pub trust_floor: f64,
    pub slack_weight: f64,
    /// With slacks disabled the subproblems carry hard collision constraints
    /// and may come back infeasible.
    pub use_slack: bool,
    pub qp_tolerance: f64,
    pub qp_max_iterations: usize,
    /// Unit direction substituted when a linearization point coincides with
    /// an obstacle mean; derived from the scenario seed by the harness.
    pub fallback_direction: Vec2,
}

impl Default for ScpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-5,
            feasibility_tolerance: 1e-6,
            trust_initial: 0.5,
            trust_floor: 1e-4,
            slack_weight: 1e4,
            use_slack: true,
            qp_tolerance: 1e-8,
            qp_max_iterations: 200,
            fallback_direction: Vec2 { x: 0.0, y: 1.0 },
        }
    }
}

impl ScpOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_tolerance", self.step_tolerance),
            ("feasibility_tolerance", self.feasibility_tolerance),
            ("trust_initial", self.trust_initial),
            ("trust_floor", self.trust_floor),
            ("slack_weight", self.slack_weight),
            ("qp_tolerance", self.qp_tolerance),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::InvalidProblem(format!("{name} must be positive, got {value}")));
            }
        }
        if self.trust_floor > self.trust_initial {
            return Err(Error::InvalidProblem(
                "trust_floor must not exceed trust_initial".into(),
            ));
        }
        if self.max_iterations < 1 || self.qp_max_iterations < 1 {
            return Err(Error::InvalidProblem("iteration limits must be at least 1".into()));
        }
        if (self.fallback_direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProblem(
                "fallback_direction must be a unit vector".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Stalled,
    Infeasible,
    MaxIter,
}

/// Everything a solve produced, including the accepted iterate history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub trajectory: Trajectory,
    pub status: SolveStatus,
    /// QP subproblems solved.
    pub iterations: usize,
    /// Accepted iterates: the initial guess followed by each accepted step
    /// under the iterative policy; empty for the fixed policy's single QP.
    pub iterate_history: Vec<Trajectory>,
    /// Largest true constraint violation of the final trajectory, meters.
    pub max_constraint_violation: f64,
    /// Total linearized violation (QP slack) of the final trajectory, meters.
    pub slack_used: f64,
    pub objective: f64,
    /// Distance from the final position to the goal, meters.
    pub goal_error: f64,
    /// Times the degenerate-linearization fallback direction was applied.
    pub degenerate_fallbacks: usize,
    /// Seconds spent inside the solve; excluded from byte-determinism.
    pub wall_time: f64,
}

/// One collision half-plane inside a subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionConstraint {
    pub obstacle: usize,
    pub linearized: LinearizedChanceConstraint,
}

/// A built convex subproblem plus the metadata the SCP loop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub qp: DenseQP,
    pub constraints: Vec<CollisionConstraint>,
    pub num_inputs: usize,
    pub uses_slack: bool,
    pub degenerate_fallbacks: usize,
    /// Expanded-row indices of the slack nonnegativity bounds; handed to the
    /// QP as the initial working set.
    pub slack_bound_rows: Vec<usize>,
}

impl Subproblem {
    pub fn extract_inputs(&self, x: &DVector<f64>) -> Vec<Vec2> {
        (0..self.num_inputs / 2)
            .map(|j| Vec2::new(x[2 * j], x[2 * j + 1]))
            .collect()
    }

    /// Total violation of the linearized constraints at the given positions;
    /// equals the QP slack total at its optimum.
    pub fn linearized_violation(&self, positions: &[Vec2]) -> f64 {
        self.constraints
            .iter()
            .map(|c| (-c.linearized.residual(positions[c.linearized.step])).max(0.0))
            .sum()
    }
}

/// Linearize the collision constraints at `lin_traj` and assemble the QP over
/// inputs and slacks: exact quadratic cost, collision half-planes with L1
/// slack, componentwise input bounds, and an infinity-norm trust region on
/// positions (skipped when `trust_radius` is infinite).
pub fn build_subproblem(
    problem: &TrajectoryProblem,
    lin_traj: &Trajectory,
    trust_radius: f64,
    opts: &ScpOptions,
) -> Result<Subproblem> {
    if !(trust_radius > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "trust radius must be positive, got {trust_radius}"
        )));
    }
    let n = problem.steps;
    let num_inputs = 2 * n;
    let coeff = problem.position_input_coefficients();
    let lin_positions = lin_traj.positions();
    if lin_positions.len() != n + 1 {
        return Err(Error::DimensionMismatch(format!(
            "linearization trajectory has {} positions, expected {}",
            lin_positions.len(),
            n + 1
        )));
    }

    // Collision constraints at steps 1..=N (position 0 is fixed).
    let mut constraints = Vec::new();
    let mut degenerate_fallbacks = 0usize;
    for k in 1..=n {
        for (obstacle_index, seq) in problem.obstacles.iter().enumerate() {
            let disc = &seq[k];
            let linearized = match linearize_collision(
                lin_positions[k],
                disc,
                problem.robot_radius,
                &problem.robot_cov,
                problem.delta,
                k,
            ) {
                Ok(c) => c,
                Err(Error::DegenerateLinearization { .. }) => {
                    degenerate_fallbacks += 1;
                    linearize_with_direction(
                        opts.fallback_direction,
                        disc,
                        problem.robot_radius,
                        &problem.robot_cov,
                        problem.delta,
                        k,
                    )
                }
                Err(other) => return Err(other),
            };
            constraints.push(CollisionConstraint {
                obstacle: obstacle_index,
                linearized,
            });
        }
    }

    let num_slacks = if opts.use_slack { constraints.len() } else { 0 };
    let num_vars = num_inputs + num_slacks;

    // Quadratic cost: 1/2 z' H z + f' z with H = 2 (sum_k w_k C_k'C_k + R I)
    // on the input block; slacks enter linearly.
    let mut hessian = DMatrix::zeros(num_vars, num_vars);
    let mut linear = DVector::zeros(num_vars);
    let mut stage_weights = vec![problem.stage_weight; n + 1];
    stage_weights[n] = problem.terminal_weight;
    let offset = problem.start - problem.goal;
    for j in 0..n {
        for jj in j..n {
            let mut acc = 0.0;
            for k in 0..=n {
                acc += stage_weights[k] * coeff[(k, j)] * coeff[(k, jj)];
            }
            let value = 2.0 * acc;
            for c in 0..2 {
                hessian[(2 * j + c, 2 * jj + c)] = value;
                hessian[(2 * jj + c, 2 * j + c)] = value;
            }
        }
        for c in 0..2 {
            hessian[(2 * j + c, 2 * j + c)] += 2.0 * problem.input_weight;
        }
        let mut acc = 0.0;
        for k in 0..=n {
            acc += stage_weights[k] * coeff[(k, j)];
        }
        linear[2 * j] = 2.0 * acc * offset.x;
        linear[2 * j + 1] = 2.0 * acc * offset.y;
    }
    for s in 0..num_slacks {
        linear[num_inputs + s] = opts.slack_weight;
    }

    // Inequality rows: collision constraints first, then the trust region.
    let include_trust = trust_radius.is_finite();
    let num_trust_rows = if include_trust { 4 * n } else { 0 };
    let mut ineq = DMatrix::zeros(constraints.len() + num_trust_rows, num_vars);
    let mut ineq_rhs = DVector::zeros(constraints.len() + num_trust_rows);
    for (row, constraint) in constraints.iter().enumerate() {
        let k = constraint.linearized.step;
        let normal = constraint.linearized.normal;
        for j in 0..k {
            ineq[(row, 2 * j)] = -coeff[(k, j)] * normal.x;
            ineq[(row, 2 * j + 1)] = -coeff[(k, j)] * normal.y;
        }
        if opts.use_slack {
            ineq[(row, num_inputs + row)] = -1.0;
        }
        ineq_rhs[row] = normal.dot(problem.start) - constraint.linearized.offset;
    }
    if include_trust {
        let mut row = constraints.len();
        for k in 1..=n {
            let lin_offset = lin_positions[k] - problem.start;
            for (c, lin_c) in [lin_offset.x, lin_offset.y].into_iter().enumerate() {
                for sign in [1.0, -1.0] {
                    for j in 0..k {
                        ineq[(row, 2 * j + c)] = sign * coeff[(k, j)];
                    }
                    ineq_rhs[row] = trust_radius + sign * lin_c;
                    row += 1;
                }
            }
        }
    }

    let mut lower = DVector::from_element(num_vars, -problem.input_bound);
    let mut upper = DVector::from_element(num_vars, problem.input_bound);
    for s in 0..num_slacks {
        lower[num_inputs + s] = 0.0;
        upper[num_inputs + s] = f64::INFINITY;
    }

    let num_ineq = ineq.nrows();
    let qp = DenseQP {
        hessian,
        linear,
        ineq,
        ineq_rhs,
        lower: Some(lower),
        upper: Some(upper),
    };
    // Expanded rows: inequalities, then one lower-bound row per variable
    // (all lower bounds are finite), then the finite upper bounds.
    let slack_bound_rows = (0..num_slacks)
        .map(|s| num_ineq + num_inputs + s)
        .collect();

    Ok(Subproblem {
        qp,
        constraints,
        num_inputs,
        uses_slack: opts.use_slack,
        degenerate_fallbacks,
        slack_bound_rows,
    })
}

/// Sum and max of the true (non-linearized) constraint violations over the
/// horizon.
pub fn true_violation(problem: &TrajectoryProblem, trajectory: &Trajectory) -> (f64, f64) {
    let mut total = 0.0;
    let mut worst = 0.0f64;
    for k in 1..=problem.steps {
        for seq in &problem.obstacles {
            let margin = collision_margin(
                trajectory.positions()[k],
                &seq[k],
                problem.robot_radius,
                &problem.robot_cov,
                problem.delta,
            );
            let violation = (-margin).max(0.0);
            total += violation;
            worst = worst.max(violation);
        }
    }
    (total, worst)
}

fn max_position_delta(a: &Trajectory, b: &Trajectory) -> f64 {
    a.positions()
        .iter()
        .zip(b.positions())
        .map(|(p, q)| (p.x - q.x).abs().max((p.y - q.y).abs()))
        .fold(0.0, f64::max)
}

/// Run the trajectory optimization under the given linearization policy.
///
/// Iterative: linearize at the current iterate, solve the QP, accept the
/// step when the true violation does not exceed the model prediction, else
/// halve the trust radius (floor `trust_floor` gives `Stalled`); converge
/// when the step infinity-norm and total slack drop below their tolerances.
/// Fixed: one subproblem at `guess`, one QP, classified by final slack.
pub fn solve(
    problem: &TrajectoryProblem,
    policy: LinearizationPolicy,
    guess: &Trajectory,
    opts: &ScpOptions,
) -> Result<SolveReport> {
    problem.validate()?;
    opts.validate()?;
    let reconstructed = rollout(problem, guess.inputs())?;
    if reconstructed.positions() != guess.positions() {
        return Err(Error::InvalidProblem(
            "guess positions are not the rollout of its inputs".into(),
        ));
    }

    let clock = Instant::now();
    let report = match policy {
        LinearizationPolicy::Fixed => solve_fixed(problem, guess, opts)?,
        LinearizationPolicy::Iterative => solve_iterative(problem, guess, opts)?,
    };
    Ok(SolveReport {
        wall_time: clock.elapsed().as_secs_f64(),
        ..report
    })
}

fn solve_fixed(
    problem: &TrajectoryProblem,
    guess: &Trajectory,
    opts: &ScpOptions,
) -> Result<SolveReport> {
    let sub = build_subproblem(problem, guess, opts.trust_initial, opts)?;
    let qp_sol = solve_qp_warm(
        &sub.qp,
        opts.qp_tolerance,
        opts.qp_max_iterations,
        &sub.slack_bound_rows,
    );
    if qp_sol.status == QPStatus::Infeasible {
        let (slack_used, max_violation) = true_violation(problem, guess);
        return Ok(report_from(
            problem,
            guess.clone(),
            SolveStatus::Infeasible,
            1,
            Vec::new(),
            max_violation,
            slack_used,
            sub.degenerate_fallbacks,
        ));
    }
    let trajectory = rollout(problem, &sub.extract_inputs(&qp_sol.x))?;
    let slack_used = sub.linearized_violation(trajectory.positions());
    let (_, max_violation) = true_violation(problem, &trajectory);
    let status = if slack_used <= opts.feasibility_tolerance {
        SolveStatus::Converged
    } else {
        SolveStatus::Stalled
    };
    Ok(report_from(
        problem,
        trajectory,
        status,
        1,
        Vec::new(),
        max_violation,
        slack_used,
        sub.degenerate_fallbacks,
    ))
}

fn solve_iterative(
    problem: &TrajectoryProblem,
    guess: &Trajectory,
    opts: &ScpOptions,
) -> Result<SolveReport> {
    let mut current = guess.clone();
    let mut trust = opts.trust_initial;
    let mut history = vec![current.clone()];
    let mut fallbacks = 0usize;
    let mut iterations = 0usize;
    let mut status = SolveStatus::MaxIter;
    // Until a step is accepted, report the guess's own violation; the
    // linearization at a point reproduces the true margin there.
    let (mut slack_used, mut max_violation) = true_violation(problem, &current);

    while iterations < opts.max_iterations {
        iterations += 1;
        let sub = build_subproblem(problem, &current, trust, opts)?;
        fallbacks += sub.degenerate_fallbacks;
        let qp_sol = solve_qp_warm(
            &sub.qp,
            opts.qp_tolerance,
            opts.qp_max_iterations,
            &sub.slack_bound_rows,
        );
        if qp_sol.status == QPStatus::Infeasible {
            status = SolveStatus::Infeasible;
            break;
        }
        let candidate = rollout(problem, &sub.extract_inputs(&qp_sol.x))?;
        let model_violation = sub.linearized_violation(candidate.positions());
        let (true_total, true_max) = true_violation(problem, &candidate);

        if true_total <= model_violation + ACCEPT_TOL {
            let step_norm = max_position_delta(&current, &candidate);
            current = candidate;
            history.push(current.clone());
            slack_used = model_violation;
            max_violation = true_max;
            if step_norm <= opts.step_tolerance && slack_used <= opts.feasibility_tolerance {
                status = SolveStatus::Converged;
                break;
            }
        } else {
            trust *= 0.5;
            if trust < opts.trust_floor {
                status = SolveStatus::Stalled;
                break;
            }
        }
    }

    Ok(report_from(
        problem,
        current,
        status,
        iterations,
        history,
        max_violation,
        slack_used,
        fallbacks,
    ))
}

#[allow(clippy::too_many_arguments)]
fn report_from(
    problem: &TrajectoryProblem,
    trajectory: Trajectory,
    status: SolveStatus,
    iterations: usize,
    iterate_history: Vec<Trajectory>,
    max_constraint_violation: f64,
    slack_used: f64,
    degenerate_fallbacks: usize,
) -> SolveReport {
    let objective = objective(problem, &trajectory);
    let goal_error = (trajectory.final_position() - problem.goal).norm();
    SolveReport {
        trajectory,
        status,
        iterations,
        iterate_history,
        max_constraint_violation,
        slack_used,
        objective,
        goal_error,
        degenerate_fallbacks,
        wall_time: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_problem(dynamics: Dynamics, steps: usize, dt: f64) -> TrajectoryProblem {
        TrajectoryProblem {
            start: Vec2::ZERO,
            goal: Vec2::new(1.0, 0.0),
            steps,
            dt,
            dynamics,
            stage_weight: 0.0,
            input_weight: 0.1,
            terminal_weight: 10.0,
            input_bound: 10.0,
            obstacles: Vec::new(),
            robot_radius: 0.3,
            robot_cov: Cov2::ZERO,
            delta: ChanceLevel::new(0.05).unwrap(),
        }
    }

    #[test]
    fn rollout_rest_trajectory() {
        let problem = bare_problem(Dynamics::SingleIntegrator, 5, 0.1);
        let traj = rollout(&problem, &[Vec2::ZERO; 5]).unwrap();
        assert!(traj.positions().iter().all(|p| *p == Vec2::ZERO));
    }

    #[test]
    fn rollout_straight_line_single_integrator() {
        let problem = bare_problem(Dynamics::SingleIntegrator, 10, 0.1);
        let traj = rollout(&problem, &[Vec2::new(1.0, 0.0); 10]).unwrap();
        assert!((traj.final_position().x - 1.0).abs() <= 1e-12);
        assert_eq!(traj.final_position().y, 0.0);
    }

    #[test]
    fn rollout_double_integrator_closed_form() {
        let problem = bare_problem(Dynamics::DoubleIntegrator, 10, 0.1);
        let traj = rollout(&problem, &[Vec2::new(1.0, 0.0); 10]).unwrap();
        // From rest under constant acceleration: x(T) = a T^2 / 2 = 0.5.
        assert!((traj.final_position().x - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn rollout_rejects_out_of_bound_inputs() {
        let problem = bare_problem(Dynamics::SingleIntegrator, 2, 0.1);
        let err = rollout(&problem, &[Vec2::new(11.0, 0.0), Vec2::ZERO]).unwrap_err();
        assert!(matches!(err, Error::InputBound { index: 0, .. }));
    }

    #[test]
    fn position_coefficients_match_rollout() {
        for dynamics in [Dynamics::SingleIntegrator, Dynamics::DoubleIntegrator] {
            let problem = bare_problem(dynamics, 6, 0.2);
            let inputs: Vec<Vec2> = (0..6)
                .map(|i| Vec2::new(0.1 * i as f64 - 0.2, 0.05 * i as f64))
                .collect();
            let traj = rollout(&problem, &inputs).unwrap();
            let coeff = problem.position_input_coefficients();
            for k in 0..=6 {
                let mut p = problem.start;
                for (j, u) in inputs.iter().enumerate() {
                    p = p + u.scaled(coeff[(k, j)]);
                }
                assert!((p - traj.positions()[k]).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn straight_line_guess_uniform_interpolation() {
        let problem = bare_problem(Dynamics::SingleIntegrator, 10, 0.1);
        let guess = straight_line_guess(&problem);
        for (k, p) in guess.positions().iter().enumerate() {
            assert!((p.x - k as f64 / 10.0).abs() <= 1e-12);
            assert_eq!(p.y, 0.0);
        }
    }

    #[test]
    fn straight_line_guess_start_equals_goal() {
        let mut problem = bare_problem(Dynamics::SingleIntegrator, 8, 0.1);
        problem.goal = problem.start;
        let guess = straight_line_guess(&problem);
        assert!(guess.positions().iter().all(|p| *p == problem.start));
        assert!(guess.inputs().iter().all(|u| *u == Vec2::ZERO));
    }

    #[test]
    fn straight_line_guess_clipped_by_input_bound() {
        let mut problem = bare_problem(Dynamics::SingleIntegrator, 10, 0.1);
        problem.goal = Vec2::new(2.0, 0.0);
        problem.input_bound = 1.0;
        let guess = straight_line_guess(&problem);
        // Max speed 1 m/s for 1 s of horizon: ends 1 m short of the goal.
        assert!((guess.final_position().x - 1.0).abs() <= 1e-12);
        assert!(guess.inputs().iter().all(|u| u.x.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn scp_options_reject_bad_values() {
        let mut opts = ScpOptions::default();
        opts.trust_floor = 1.0;
        assert!(opts.validate().is_err());
        let mut opts = ScpOptions::default();
        opts.fallback_direction = Vec2::new(0.0, 2.0);
        assert!(opts.validate().is_err());
        assert!(ScpOptions::default().validate().is_ok());
    }
}
