//! Deterministic reformulation of the probabilistic collision constraint.
//!
//! The chance constraint "collide with probability at most delta" against a
//! Gaussian-distributed disc is replaced, at a chosen linearization point, by
//! the half-plane
//!
//! ```text
//!     a' p - b >= 0,
//!     a = (p_lin - mean) / |p_lin - mean|,
//!     b = a' mean + (r_robot + r_obstacle) + c(delta) * sqrt(2) * sqrt(a' S a),
//! ```
//!
//! where `S` is the combined robot + obstacle covariance and
//! `c(delta) = erf_inv(1 - 2 delta)`. The margin equals the one-sided
//! Gaussian quantile along `a`, so any point satisfying the constraint keeps
//! the linearized collision probability at or below `delta`. Where the
//! linearization point must sit relative to the optimizer's iterates is
//! exactly what [`LinearizationPolicy`] captures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{directional_stddev, margin_coefficient, ChanceLevel, Cov2, GaussianDisc, Vec2};
use crate::rng::CounterRng;

/// Distance below which a linearization point is considered to coincide with
/// the obstacle mean and the direction becomes undefined.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

/// Half-plane surrogate of the collision chance constraint at one step.
/// Satisfied at `p` iff `normal . p - offset >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedChanceConstraint {
    /// Unit vector pointing from the obstacle mean toward the feasible side.
    pub normal: Vec2,
    /// Offset in meters; includes combined radius and the uncertainty margin.
    pub offset: f64,
    /// Horizon index the constraint applies to.
    pub step: usize,
}

impl LinearizedChanceConstraint {
    /// Signed satisfaction margin `normal . p - offset`; >= 0 means satisfied.
    pub fn residual(&self, p: Vec2) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// When the collision constraints get linearized relative to the solve.
///
/// `Iterative` re-linearizes at every accepted iterate, so the half-planes
/// track the trajectory as it moves. `Fixed` linearizes once at the initial
/// trajectory and keeps those half-planes for the whole solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearizationPolicy {
    Fixed,
    Iterative,
}

impl std::fmt::Display for LinearizationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinearizationPolicy::Fixed => write!(f, "fixed"),
            LinearizationPolicy::Iterative => write!(f, "iterative"),
        }
    }
}

/// Linearize the collision chance constraint at `p_lin`.
///
/// Fails with [`Error::DegenerateLinearization`] when `p_lin` coincides with
/// the obstacle mean; the caller then substitutes [`fallback_direction`].
pub fn linearize_collision(
    p_lin: Vec2,
    obstacle: &GaussianDisc,
    robot_radius: f64,
    robot_cov: &Cov2,
    delta: ChanceLevel,
    step: usize,
) -> Result<LinearizedChanceConstraint> {
    let diff = p_lin - obstacle.mean;
    let distance = diff.norm();
    if distance < DEGENERATE_DISTANCE {
        return Err(Error::DegenerateLinearization { step });
    }
    let normal = diff.scaled(1.0 / distance);
    Ok(linearize_with_direction(
        normal,
        obstacle,
        robot_radius,
        robot_cov,
        delta,
        step,
    ))
}

/// Build the half-plane for an externally chosen unit direction. Used by the
/// degenerate-linearization fallback; `direction` must be unit length.
pub fn linearize_with_direction(
    direction: Vec2,
    obstacle: &GaussianDisc,
    robot_radius: f64,
    robot_cov: &Cov2,
    delta: ChanceLevel,
    step: usize,
) -> LinearizedChanceConstraint {
    debug_assert!((direction.norm() - 1.0).abs() <= 1e-9);
    let combined_cov = *robot_cov + obstacle.cov;
    let sigma = directional_stddev(&combined_cov, direction);
    let margin = margin_coefficient(delta) * std::f64::consts::SQRT_2 * sigma;
    let offset = direction.dot(obstacle.mean) + robot_radius + obstacle.radius() + margin;
    LinearizedChanceConstraint {
        normal: direction,
        offset,
        step,
    }
}

/// Deterministic substitute direction for a degenerate linearization: the
/// unit vector (0, 1) rotated by a seed-derived angle within +/-0.25 rad.
/// The tilt breaks symmetric ties reproducibly while keeping a definite
/// lateral push.
pub fn fallback_direction(seed: u64) -> Vec2 {
    let u = CounterRng::new(seed).split(0xFA11).uniform_at(0);
    let angle = (u - 0.5) * 0.5;
    Vec2::new(0.0, 1.0).rotated(angle)
}

/// Signed margin of the non-linearized deterministic constraint at `p`:
/// distance to the obstacle mean minus combined radius and the quantile
/// margin along the current direction. Positive means satisfied. Coincides
/// with the linearized residual when the constraint is linearized at `p`
/// itself.
pub fn collision_margin(
    p: Vec2,
    obstacle: &GaussianDisc,
    robot_radius: f64,
    robot_cov: &Cov2,
    delta: ChanceLevel,
) -> f64 {
    let combined_cov = *robot_cov + obstacle.cov;
    let coeff = margin_coefficient(delta) * std::f64::consts::SQRT_2;
    let combined_radius = robot_radius + obstacle.radius();
    let diff = p - obstacle.mean;
    let distance = diff.norm();
    if distance < DEGENERATE_DISTANCE {
        // Direction undefined; report the worst case.
        let (major, _, _) = combined_cov.eigen();
        return -(combined_radius + coeff * major.sqrt());
    }
    let direction = diff.scaled(1.0 / distance);
    distance - combined_radius - coeff * directional_stddev(&combined_cov, direction)
}

/// Monte-Carlo estimate of the collision probability at robot position `p`:
/// the fraction of positions drawn from the combined Gaussian whose distance
/// to `p` is at most the combined radius. Deterministic for a fixed seed;
/// sample `i` depends only on `(seed, i)`, so shards merge order-free.
pub fn chance_probability_oracle(
    p: Vec2,
    obstacle: &GaussianDisc,
    robot_radius: f64,
    robot_cov: &Cov2,
    samples: usize,
    seed: u64,
) -> f64 {
    assert!(samples >= 1, "at least one sample required");
    let combined_cov = *robot_cov + obstacle.cov;
    let (lxx, lyx, lyy) = combined_cov.cholesky_lower();
    let rel_mean = obstacle.mean - p;
    let combined_radius = robot_radius + obstacle.radius();
    let threshold_sq = combined_radius * combined_radius;
    let rng = CounterRng::new(seed);
    let mut hits = 0usize;
    for i in 0..samples {
        let (z1, z2) = rng.normal_pair_at(i as u64);
        let dx = rel_mean.x + lxx * z1;
        let dy = rel_mean.y + lyx * z1 + lyy * z2;
        if dx * dx + dy * dy <= threshold_sq {
            hits += 1;
        }
    }
    hits as f64 / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(d: f64) -> ChanceLevel {
        ChanceLevel::new(d).unwrap()
    }

    fn disc(mean: Vec2, cov: Cov2, radius: f64) -> GaussianDisc {
        GaussianDisc::new(mean, cov, radius).unwrap()
    }

    #[test]
    fn zero_covariance_reduces_to_disc_avoidance() {
        let obstacle = disc(Vec2::ZERO, Cov2::ZERO, 0.25);
        let c = linearize_collision(
            Vec2::new(1.0, 0.0),
            &obstacle,
            0.25,
            &Cov2::ZERO,
            delta(0.1),
            3,
        )
        .unwrap();
        assert!((c.normal.x - 1.0).abs() <= 1e-15);
        assert!(c.normal.y.abs() <= 1e-15);
        assert!((c.offset - 0.5).abs() <= 1e-15);
        assert_eq!(c.step, 3);
    }

    #[test]
    fn margin_matches_frozen_quantile() {
        // c(0.05) * sqrt(2) * 0.2 on top of the combined radius 0.5.
        let obstacle = disc(Vec2::ZERO, Cov2::isotropic(0.04).unwrap(), 0.25);
        let c = linearize_collision(
            Vec2::new(1.0, 0.0),
            &obstacle,
            0.25,
            &Cov2::ZERO,
            delta(0.05),
            0,
        )
        .unwrap();
        assert!((c.offset - 0.8289707253902945).abs() <= 1e-12, "{}", c.offset);
        // Residual example from the same geometry.
        assert!((c.residual(Vec2::new(0.5, 0.4)) + 0.3289707253902945).abs() <= 1e-12);
    }

    #[test]
    fn residual_boundary_and_interior() {
        let c = LinearizedChanceConstraint {
            normal: Vec2::new(1.0, 0.0),
            offset: 0.5,
            step: 0,
        };
        assert_eq!(c.residual(Vec2::new(0.5, 0.0)), 0.0);
        assert_eq!(c.residual(Vec2::new(1.0, 0.0)), 0.5);
    }

    #[test]
    fn coincident_point_is_degenerate() {
        let obstacle = disc(Vec2::ZERO, Cov2::ZERO, 0.25);
        let err = linearize_collision(Vec2::ZERO, &obstacle, 0.1, &Cov2::ZERO, delta(0.1), 7)
            .unwrap_err();
        assert_eq!(err, Error::DegenerateLinearization { step: 7 });
    }

    #[test]
    fn splitting_covariance_between_robot_and_obstacle_is_equivalent() {
        let total = Cov2::new(0.05, 0.01, 0.03).unwrap();
        let half = total.scaled(0.5);
        let p = Vec2::new(0.3, -1.1);
        let all_obstacle = linearize_collision(
            p,
            &disc(Vec2::new(1.0, 0.5), total, 0.2),
            0.3,
            &Cov2::ZERO,
            delta(0.05),
            0,
        )
        .unwrap();
        let split = linearize_collision(
            p,
            &disc(Vec2::new(1.0, 0.5), half, 0.2),
            0.3,
            &half,
            delta(0.05),
            0,
        )
        .unwrap();
        assert!((all_obstacle.offset - split.offset).abs() <= 1e-12);
        assert_eq!(all_obstacle.normal, split.normal);
    }

    #[test]
    fn fallback_direction_is_unit_and_mostly_upward() {
        for seed in 0..50u64 {
            let d = fallback_direction(seed);
            assert!((d.norm() - 1.0).abs() <= 1e-12);
            assert!(d.y > 0.9, "seed {seed} gave {d:?}");
        }
        assert_eq!(fallback_direction(7), fallback_direction(7));
    }

    #[test]
    fn collision_margin_equals_residual_at_linearization_point() {
        let obstacle = disc(Vec2::new(1.0, 2.0), Cov2::new(0.03, 0.01, 0.05).unwrap(), 0.4);
        let p = Vec2::new(2.5, 1.0);
        let lin = linearize_collision(p, &obstacle, 0.3, &Cov2::ZERO, delta(0.03), 0).unwrap();
        let margin = collision_margin(p, &obstacle, 0.3, &Cov2::ZERO, delta(0.03));
        assert!((lin.residual(p) - margin).abs() <= 1e-12);
    }

    #[test]
    fn oracle_deterministic_hit_and_miss() {
        let obstacle = disc(Vec2::ZERO, Cov2::ZERO, 0.25);
        let miss = chance_probability_oracle(
            Vec2::new(1.0, 0.0),
            &obstacle,
            0.25,
            &Cov2::ZERO,
            1000,
            42,
        );
        assert_eq!(miss, 0.0);
        let hit = chance_probability_oracle(
            Vec2::new(0.3, 0.0),
            &obstacle,
            0.25,
            &Cov2::ZERO,
            1000,
            42,
        );
        assert_eq!(hit, 1.0);
    }

    #[test]
    fn oracle_is_seed_reproducible() {
        let obstacle = disc(Vec2::ZERO, Cov2::isotropic(0.04).unwrap(), 0.25);
        let p = Vec2::new(0.8, 0.1);
        let a = chance_probability_oracle(p, &obstacle, 0.25, &Cov2::ZERO, 20_000, 9);
        let b = chance_probability_oracle(p, &obstacle, 0.25, &Cov2::ZERO, 20_000, 9);
        assert_eq!(a, b);
        let c = chance_probability_oracle(p, &obstacle, 0.25, &Cov2::ZERO, 20_000, 10);
        assert_ne!(a, c);
    }
}
