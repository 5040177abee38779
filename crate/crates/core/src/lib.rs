//! Trajectory optimization under Gaussian obstacle uncertainty.
//!
//! The crate plans collision-free trajectories against moving, uncertain
//! disc obstacles by sequential convex programming. The probabilistic
//! collision constraints are reformulated as deterministic half-planes whose
//! offsets carry a quantile-scaled uncertainty margin; crucially, the
//! reformulation is re-linearized *inside* the solver loop at every accepted
//! iterate rather than once up front. The [`harness`] module ships a
//! benchmark that contrasts both choices: the iterative policy rounds the
//! obstacle and reaches the goal, the fixed policy gets trapped by its own
//! initial half-planes.
//!
//! Modules:
//! - [`prob`]: Gaussian primitives (erf, quantiles, covariances, prediction)
//! - [`reform`]: chance-constraint linearization and Monte-Carlo oracle
//! - [`qp`]: dense convex QP solver (dual active set)
//! - [`scp`]: trajectory problems and the SCP driver
//! - [`harness`]: scenarios, comparison runner, trajectory validation
//! - [`rng`]: counter-based deterministic random streams

pub mod error;
pub mod harness;
pub mod prob;
pub mod qp;
pub mod reform;
pub mod rng;
pub mod scp;

pub use error::Error;
pub use harness::{
    canonical_benchmark, is_failure, run_comparison, run_comparison_with_samples,
    validate_trajectory, ComparisonReport, ObstacleMotion, PolicyOutcome, Scenario,
    DEFAULT_MC_SAMPLES,
};
pub use prob::{ChanceLevel, Cov2, GaussianDisc, Vec2};
pub use reform::{LinearizationPolicy, LinearizedChanceConstraint};
pub use scp::{
    build_subproblem, objective, rollout, solve, straight_line_guess, Dynamics, ScpOptions,
    SolveReport, SolveStatus, Trajectory, TrajectoryProblem,
};
