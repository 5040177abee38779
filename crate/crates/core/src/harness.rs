//! Benchmark scenarios and the policy comparison runner.
//!
//! A [`Scenario`] is the serializable description of one trajectory
//! benchmark: geometry, obstacle motion and uncertainty model, chance level,
//! cost weights, solver options, and the seed that makes every derived
//! random stream reproducible. [`run_comparison`] solves it under both
//! linearization policies from the same straight-line guess, attaches
//! Monte-Carlo collision estimates, and classifies each outcome with the
//! failure rule.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{propagate_obstacle, ChanceLevel, Cov2, GaussianDisc, Vec2};
use crate::reform::{chance_probability_oracle, fallback_direction, LinearizationPolicy};
use crate::rng::derive_seed;
use crate::scp::{
    rollout, solve, straight_line_guess, Dynamics, ScpOptions, SolveReport, Trajectory,
    TrajectoryProblem,
};

/// Monte-Carlo sample count used when the caller does not override it;
/// resolves a chance level of a few percent with ~2e-3 standard error.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Sub-stream tags for seeds derived from the scenario seed.
const STREAM_MC_FIXED: u64 = 100;
const STREAM_MC_ITERATIVE: u64 = 101;

/// Constant-velocity obstacle with linearly growing position uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleMotion {
    /// Mean position at step 0, meters.
    pub mean: Vec2,
    /// Mean velocity, m/s.
    pub velocity: Vec2,
    /// Position covariance at step 0, m^2.
    pub cov0: Cov2,
    /// Additive covariance growth per step, m^2.
    pub cov_growth: Cov2,
    /// Disc radius, meters.
    pub radius: f64,
}

/// Serializable benchmark description. Physical quantities are SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub start: Vec2,
    pub goal: Vec2,
    pub steps: usize,
    pub dt: f64,
    pub dynamics: Dynamics,
    pub stage_weight: f64,
    pub input_weight: f64,
    pub terminal_weight: f64,
    pub input_bound: f64,
    pub robot_radius: f64,
    pub robot_cov: Cov2,
    /// Admissible per-step collision probability, in (0, 0.5).
    pub delta: f64,
    pub obstacles: Vec<ObstacleMotion>,
    /// Solver options; `fallback_direction` is recomputed from `seed` when
    /// the harness runs the scenario.
    #[serde(default)]
    pub options: ScpOptions,
    /// Root seed for the fallback direction and Monte-Carlo streams.
    pub seed: u64,
}

impl Scenario {
    /// Validate every field and expand the obstacle motion models into
    /// per-step predictions. Errors name the offending field.
    pub fn to_problem(&self) -> Result<TrajectoryProblem> {
        let field_err = |field: &str, reason: String| Error::InvalidScenario {
            field: field.to_string(),
            reason,
        };
        if self.steps < 1 {
            return Err(field_err("steps", format!("must be at least 1, got {}", self.steps)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(field_err("dt", format!("must be positive and finite, got {}", self.dt)));
        }
        if !(self.input_bound > 0.0 && self.input_bound.is_finite()) {
            return Err(field_err(
                "input_bound",
                format!("must be positive and finite, got {}", self.input_bound),
            ));
        }
        for (name, w) in [
            ("stage_weight", self.stage_weight),
            ("input_weight", self.input_weight),
            ("terminal_weight", self.terminal_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(field_err(name, format!("must be nonnegative and finite, got {w}")));
            }
        }
        if !self.start.is_finite() {
            return Err(field_err("start", "components must be finite".into()));
        }
        if !self.goal.is_finite() {
            return Err(field_err("goal", "components must be finite".into()));
        }
        if !(self.robot_radius >= 0.0 && self.robot_radius.is_finite()) {
            return Err(field_err(
                "robot_radius",
                format!("must be nonnegative and finite, got {}", self.robot_radius),
            ));
        }
        let delta = ChanceLevel::new(self.delta)
            .map_err(|_| field_err("delta", format!("must lie in (0, 0.5), got {}", self.delta)))?;
        let mut obstacles = Vec::with_capacity(self.obstacles.len());
        for (i, motion) in self.obstacles.iter().enumerate() {
            if !motion.mean.is_finite() || !motion.velocity.is_finite() {
                return Err(field_err(
                    &format!("obstacles[{i}]"),
                    "mean and velocity must be finite".into(),
                ));
            }
            let disc0 = GaussianDisc::new(motion.mean, motion.cov0, motion.radius)
                .map_err(|e| field_err(&format!("obstacles[{i}].radius"), e.to_string()))?;
            let seq: Vec<GaussianDisc> = (0..=self.steps)
                .map(|k| propagate_obstacle(&disc0, motion.velocity, &motion.cov_growth, k, self.dt))
                .collect();
            obstacles.push(seq);
        }
        self.options
            .validate()
            .map_err(|e| field_err("options", e.to_string()))?;
        Ok(TrajectoryProblem {
            start: self.start,
            goal: self.goal,
            steps: self.steps,
            dt: self.dt,
            dynamics: self.dynamics,
            stage_weight: self.stage_weight,
            input_weight: self.input_weight,
            terminal_weight: self.terminal_weight,
            input_bound: self.input_bound,
            obstacles,
            robot_radius: self.robot_radius,
            robot_cov: self.robot_cov,
            delta,
        })
    }

    /// Options actually used for a run: the stored options with the
    /// degenerate-linearization fallback direction derived from the seed.
    pub fn run_options(&self) -> ScpOptions {
        let mut options = self.options.clone();
        options.fallback_direction = fallback_direction(self.seed);
        options
    }
}

/// The repository's default benchmark: a single inflating static obstacle
/// sitting exactly on the start-goal segment, so the straight-line guess is
/// infeasible at mid-horizon and symmetric about the obstacle. All numbers
/// are repository defaults.
pub fn canonical_benchmark() -> Scenario {
    Scenario {
        name: "canonical".to_string(),
        start: Vec2::new(0.0, 0.0),
        goal: Vec2::new(6.0, 0.0),
        steps: 20,
        dt: 0.2,
        dynamics: Dynamics::SingleIntegrator,
        stage_weight: 0.0,
        input_weight: 0.1,
        terminal_weight: 1e5,
        input_bound: 2.0,
        robot_radius: 0.3,
        robot_cov: Cov2::ZERO,
        delta: 0.03,
        obstacles: vec![ObstacleMotion {
            mean: Vec2::new(3.0, 0.0),
            velocity: Vec2::ZERO,
            cov0: Cov2::isotropic(0.02).expect("isotropic covariance is PSD"),
            cov_growth: Cov2::isotropic(0.005).expect("isotropic covariance is PSD"),
            radius: 0.4,
        }],
        options: ScpOptions::default(),
        seed: 7,
    }
}

/// The documented failure rule: a run fails iff the final position misses
/// the goal by more than ten step tolerances or slack was needed.
pub fn is_failure(report: &SolveReport, opts: &ScpOptions) -> bool {
    report.goal_error > 10.0 * opts.step_tolerance
        || report.slack_used > opts.feasibility_tolerance
}

/// One policy's solve plus its classification and Monte-Carlo estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub policy: LinearizationPolicy,
    pub report: SolveReport,
    pub failed: bool,
    /// Per-step Monte-Carlo collision probability of the final trajectory.
    pub mc_collision: Vec<f64>,
}

/// Both policies run from the identical straight-line guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario_name: String,
    pub fixed: PolicyOutcome,
    pub iterative: PolicyOutcome,
    pub mc_samples: usize,
    /// Seconds for both solves plus validation; excluded from
    /// byte-determinism.
    pub total_wall_time: f64,
}

impl SolveReport {
    /// Zero the timing fields; reports are byte-identical across repeated
    /// seeded runs after this.
    pub fn normalize_timing(&mut self) {
        self.wall_time = 0.0;
    }
}

impl ComparisonReport {
    pub fn normalize_timing(&mut self) {
        self.fixed.report.normalize_timing();
        self.iterative.report.normalize_timing();
        self.total_wall_time = 0.0;
    }
}

/// Run both policies with the default Monte-Carlo budget.
pub fn run_comparison(scenario: &Scenario) -> Result<ComparisonReport> {
    run_comparison_with_samples(scenario, DEFAULT_MC_SAMPLES)
}

/// Run both policies from the straight-line guess, validate each resulting
/// trajectory by Monte-Carlo, and classify. Solver errors in one policy do
/// not abort the other; they surface after both ran.
pub fn run_comparison_with_samples(
    scenario: &Scenario,
    samples: usize,
) -> Result<ComparisonReport> {
    let problem = scenario.to_problem()?;
    let options = scenario.run_options();
    let guess = straight_line_guess(&problem);
    let clock = Instant::now();

    let fixed = solve(&problem, LinearizationPolicy::Fixed, &guess, &options);
    let iterative = solve(&problem, LinearizationPolicy::Iterative, &guess, &options);
    let (fixed, iterative) = (fixed?, iterative?);

    let fixed_mc = validate_trajectory(
        &fixed.trajectory,
        &problem,
        samples,
        derive_seed(scenario.seed, STREAM_MC_FIXED),
    )?;
    let iterative_mc = validate_trajectory(
        &iterative.trajectory,
        &problem,
        samples,
        derive_seed(scenario.seed, STREAM_MC_ITERATIVE),
    )?;

    let failed_fixed = is_failure(&fixed, &options);
    let failed_iterative = is_failure(&iterative, &options);
    Ok(ComparisonReport {
        scenario_name: scenario.name.clone(),
        fixed: PolicyOutcome {
            policy: LinearizationPolicy::Fixed,
            report: fixed,
            failed: failed_fixed,
            mc_collision: fixed_mc,
        },
        iterative: PolicyOutcome {
            policy: LinearizationPolicy::Iterative,
            report: iterative,
            failed: failed_iterative,
            mc_collision: iterative_mc,
        },
        mc_samples: samples,
        total_wall_time: clock.elapsed().as_secs_f64(),
    })
}

/// Monte-Carlo collision probability per step of a stored trajectory.
/// With several obstacles the per-step worst case is reported. Deterministic
/// for a fixed seed; step k draws from sub-stream k.
pub fn validate_trajectory(
    trajectory: &Trajectory,
    problem: &TrajectoryProblem,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples < 1000 {
        return Err(Error::InvalidProblem(format!(
            "at least 1000 samples required for a meaningful estimate, got {samples}"
        )));
    }
    let reconstructed = rollout(problem, trajectory.inputs())?;
    if reconstructed.positions() != trajectory.positions() {
        return Err(Error::InvalidProblem(
            "trajectory positions are not the rollout of its inputs".into(),
        ));
    }
    let num_obstacles = problem.obstacles.len();
    let mut probabilities = Vec::with_capacity(problem.steps + 1);
    for (k, position) in trajectory.positions().iter().enumerate() {
        let mut worst = 0.0f64;
        for (o, seq) in problem.obstacles.iter().enumerate() {
            let estimate = chance_probability_oracle(
                *position,
                &seq[k],
                problem.robot_radius,
                &problem.robot_cov,
                samples,
                derive_seed(seed, (k * num_obstacles + o) as u64),
            );
            worst = worst.max(estimate);
        }
        probabilities.push(worst);
    }
    Ok(probabilities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reform::collision_margin;

    #[test]
    fn canonical_blocks_the_straight_line() {
        let scenario = canonical_benchmark();
        let problem = scenario.to_problem().unwrap();
        let guess = straight_line_guess(&problem);
        // Mid-horizon the guess sits inside the inflated obstacle.
        let margin = collision_margin(
            guess.positions()[10],
            &problem.obstacles[0][10],
            problem.robot_radius,
            &problem.robot_cov,
            problem.delta,
        );
        assert!(margin < 0.0, "margin {margin}");
    }

    #[test]
    fn canonical_round_trips_through_json() {
        let scenario = canonical_benchmark();
        let json = serde_json::to_string_pretty(&scenario).unwrap();
        let back: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(scenario, back);
    }

    #[test]
    fn scenario_validation_names_fields() {
        let mut scenario = canonical_benchmark();
        scenario.delta = 0.7;
        match scenario.to_problem() {
            Err(Error::InvalidScenario { field, reason }) => {
                assert_eq!(field, "delta");
                assert!(reason.contains("(0, 0.5)"), "{reason}");
            }
            other => panic!("expected named validation error, got {other:?}"),
        }

        let mut scenario = canonical_benchmark();
        scenario.dt = -0.1;
        assert!(matches!(
            scenario.to_problem(),
            Err(Error::InvalidScenario { ref field, .. }) if field == "dt"
        ));
    }

    #[test]
    fn zero_covariance_clear_trajectory_validates_to_zero() {
        let mut scenario = canonical_benchmark();
        scenario.obstacles[0].cov0 = Cov2::ZERO;
        scenario.obstacles[0].cov_growth = Cov2::ZERO;
        scenario.obstacles[0].mean = Vec2::new(3.0, 5.0); // far off the line
        let problem = scenario.to_problem().unwrap();
        let guess = straight_line_guess(&problem);
        let probabilities = validate_trajectory(&guess, &problem, 2000, 1).unwrap();
        assert_eq!(probabilities.len(), problem.steps + 1);
        assert!(probabilities.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn trajectory_through_obstacle_mean_mostly_collides() {
        let scenario = canonical_benchmark();
        let problem = scenario.to_problem().unwrap();
        let guess = straight_line_guess(&problem); // passes through (3, 0)
        let probabilities = validate_trajectory(&guess, &problem, 5000, 3).unwrap();
        assert!(probabilities[10] > 0.5, "p = {}", probabilities[10]);
    }

    #[test]
    fn validate_trajectory_rejects_small_sample_counts() {
        let scenario = canonical_benchmark();
        let problem = scenario.to_problem().unwrap();
        let guess = straight_line_guess(&problem);
        assert!(validate_trajectory(&guess, &problem, 10, 1).is_err());
    }
}
