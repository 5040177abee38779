//! Gaussian probability primitives.
//!
//! Everything the constraint reformulation needs from probability theory
//! lives here: the error function and its inverse (dependency-free, tested
//! against independent oracles), the chance-level quantile coefficient,
//! directional standard deviations of planar covariances, and the constant
//! velocity obstacle prediction model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position or velocity in meters / meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scaled(self, factor: f64) -> Vec2 {
        Vec2::new(self.x * factor, self.y * factor)
    }

    /// Rotate counterclockwise by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (sin, cos) = angle.sin_cos();
        Vec2::new(cos * self.x - sin * self.y, sin * self.x + cos * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Determinant slack accepted by the positive semidefiniteness test.
pub const TOL_PSD: f64 = 1e-12;

#[derive(Serialize, Deserialize)]
struct Cov2Raw {
    xx: f64,
    xy: f64,
    yy: f64,
}

/// Symmetric 2x2 covariance in m^2, stored as the three distinct entries.
///
/// Construction rejects matrices that fail the positive semidefiniteness
/// test `xx >= 0, yy >= 0, xx*yy - xy^2 >= -TOL_PSD`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Cov2Raw", into = "Cov2Raw")]
pub struct Cov2 {
    xx: f64,
    xy: f64,
    yy: f64,
}

impl TryFrom<Cov2Raw> for Cov2 {
    type Error = Error;
    fn try_from(raw: Cov2Raw) -> Result<Self> {
        Cov2::new(raw.xx, raw.xy, raw.yy)
    }
}

impl From<Cov2> for Cov2Raw {
    fn from(cov: Cov2) -> Self {
        Cov2Raw {
            xx: cov.xx,
            xy: cov.xy,
            yy: cov.yy,
        }
    }
}

impl Cov2 {
    pub const ZERO: Cov2 = Cov2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Result<Self> {
        let det = xx * yy - xy * xy;
        let finite = xx.is_finite() && xy.is_finite() && yy.is_finite();
        if !finite || xx < 0.0 || yy < 0.0 || det < -TOL_PSD {
            return Err(Error::CovarianceNotPsd { xx, xy, yy, det });
        }
        Ok(Self { xx, xy, yy })
    }

    pub fn isotropic(variance: f64) -> Result<Self> {
        Cov2::new(variance, 0.0, variance)
    }

    /// Internal constructor for values already known to be PSD
    /// (sums and nonnegative scalings of valid covariances).
    fn from_parts(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn xx(&self) -> f64 {
        self.xx
    }

    pub fn xy(&self) -> f64 {
        self.xy
    }

    pub fn yy(&self) -> f64 {
        self.yy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Quadratic form a' S a.
    pub fn quadratic_form(&self, a: Vec2) -> f64 {
        self.xx * a.x * a.x + 2.0 * self.xy * a.x * a.y + self.yy * a.y * a.y
    }

    pub fn scaled(&self, factor: f64) -> Cov2 {
        debug_assert!(factor >= 0.0);
        Cov2::from_parts(self.xx * factor, self.xy * factor, self.yy * factor)
    }

    /// Closed-form eigendecomposition of the symmetric 2x2 matrix.
    /// Returns (major, minor, angle of the major axis).
    pub fn eigen(&self) -> (f64, f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let diff = 0.5 * (self.xx - self.yy);
        let radius = (diff * diff + self.xy * self.xy).sqrt();
        let major = mean + radius;
        let minor = (mean - radius).max(0.0);
        let angle = if radius < f64::EPSILON * mean.max(1.0) {
            0.0
        } else {
            0.5 * self.xy.atan2(diff)
        };
        (major, minor, angle)
    }

    /// Lower Cholesky factor (lxx, lyx, lyy); tolerates rank deficiency.
    pub fn cholesky_lower(&self) -> (f64, f64, f64) {
        if self.xx <= 0.0 {
            // PSD with xx = 0 forces xy = 0.
            return (0.0, 0.0, self.yy.max(0.0).sqrt());
        }
        let lxx = self.xx.sqrt();
        let lyx = self.xy / lxx;
        let lyy = (self.yy - lyx * lyx).max(0.0).sqrt();
        (lxx, lyx, lyy)
    }
}

impl std::ops::Add for Cov2 {
    type Output = Cov2;
    fn add(self, rhs: Cov2) -> Cov2 {
        Cov2::from_parts(self.xx + rhs.xx, self.xy + rhs.xy, self.yy + rhs.yy)
    }
}

/// Admissible per-step collision probability, open interval (0, 0.5).
///
/// The upper end keeps the quantile margin nonnegative; values so small
/// that `1 - 2*delta` rounds to 1 are rejected to keep it finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ChanceLevel(f64);

impl ChanceLevel {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) || 1.0 - 2.0 * delta >= 1.0 {
            return Err(Error::InvalidChanceLevel(delta));
        }
        Ok(Self(delta))
    }

    pub fn delta(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ChanceLevel {
    type Error = Error;
    fn try_from(delta: f64) -> Result<Self> {
        ChanceLevel::new(delta)
    }
}

impl From<ChanceLevel> for f64 {
    fn from(level: ChanceLevel) -> f64 {
        level.0
    }
}

#[derive(Serialize, Deserialize)]
struct GaussianDiscRaw {
    mean: Vec2,
    cov: Cov2,
    radius: f64,
}

/// A disc-shaped obstacle whose center position is Gaussian-distributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianDiscRaw", into = "GaussianDiscRaw")]
pub struct GaussianDisc {
    pub mean: Vec2,
    pub cov: Cov2,
    radius: f64,
}

impl TryFrom<GaussianDiscRaw> for GaussianDisc {
    type Error = Error;
    fn try_from(raw: GaussianDiscRaw) -> Result<Self> {
        GaussianDisc::new(raw.mean, raw.cov, raw.radius)
    }
}

impl From<GaussianDisc> for GaussianDiscRaw {
    fn from(disc: GaussianDisc) -> Self {
        GaussianDiscRaw {
            mean: disc.mean,
            cov: disc.cov,
            radius: disc.radius,
        }
    }
}

impl GaussianDisc {
    pub fn new(mean: Vec2, cov: Cov2, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::InvalidRadius(radius));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "obstacle mean is not finite: ({}, {})",
                mean.x, mean.y
            )));
        }
        Ok(Self { mean, cov, radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Error function, accurate to 1e-12 absolute over |x| <= 6.
///
/// Power series for |x| <= 2, Legendre continued fraction for the
/// complement beyond; odd symmetry is exact by construction.
pub fn erf(x: f64) -> f64 {
    debug_assert!(x.is_finite());
    if x == 0.0 {
        return 0.0;
    }
    let ax = x.abs();
    let value = if ax <= 2.0 {
        erf_series(ax)
    } else {
        1.0 - erfc_continued_fraction(ax)
    };
    if x < 0.0 {
        -value
    } else {
        value
    }
}

/// erf(x) = (2x/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n / (2n+1)!!
/// All terms positive, so there is no cancellation.
fn erf_series(x: f64) -> f64 {
    let x2 = 2.0 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..200 {
        term *= x2 / (2.0 * n as f64 + 1.0);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    std::f64::consts::FRAC_2_SQRT_PI * x * (-x * x).exp() * sum
}

/// erfc(x) = e^{-x^2} x / sqrt(pi) * CF(x^2), x > 0, via the even-contracted
/// continued fraction for the upper incomplete gamma function Gamma(1/2, x^2),
/// evaluated with the modified Lentz algorithm.
fn erfc_continued_fraction(x: f64) -> f64 {
    let a = 0.5;
    let z = x * x;
    let tiny = 1e-300;
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..300 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    // Gamma(1/2, x^2) = e^{-x^2} * x * h; erfc = Gamma(1/2, x^2) / sqrt(pi).
    (-z).exp() * x * h / std::f64::consts::PI.sqrt()
}

/// Inverse error function on (-1, 1): bisection bracket, Newton polish.
pub fn erf_inv(y: f64) -> Result<f64> {
    if !y.is_finite() || y.abs() >= 1.0 {
        return Err(Error::ErfInvDomain(y));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let target = y.abs();
    // erf(6) rounds to 1.0 in f64, so [0, 6] brackets every representable
    // target below 1.
    let (mut lo, mut hi) = (0.0f64, 6.0f64);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if erf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let half_sqrt_pi = 0.5 * std::f64::consts::PI.sqrt();
    for _ in 0..20 {
        let residual = erf(x) - target;
        if residual > 0.0 {
            hi = hi.min(x);
        } else if residual < 0.0 {
            lo = lo.max(x);
        }
        let step = residual * half_sqrt_pi * (x * x).exp();
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * (1.0 + x.abs()) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(if y < 0.0 { -x } else { x })
}

/// Quantile coefficient c(delta) = erf_inv(1 - 2*delta) of the chance level.
///
/// Multiplied by sqrt(2) and a directional standard deviation it gives the
/// one-sided Gaussian margin that makes the half-plane constraint hold with
/// probability at least 1 - delta.
pub fn margin_coefficient(delta: ChanceLevel) -> f64 {
    erf_inv(1.0 - 2.0 * delta.delta())
        .expect("1 - 2*delta lies in (0, 1) for a valid chance level")
}

/// Standard deviation of the Gaussian along unit direction `a`: sqrt(a' S a).
pub fn directional_stddev(cov: &Cov2, a: Vec2) -> f64 {
    debug_assert!(
        (a.norm() - 1.0).abs() <= 1e-9,
        "direction must be unit length, got |a| = {}",
        a.norm()
    );
    cov.quadratic_form(a).max(0.0).sqrt()
}

/// Predict the obstacle `k` steps ahead: constant-velocity mean motion with
/// additive per-step covariance growth; the radius never changes.
pub fn propagate_obstacle(
    disc0: &GaussianDisc,
    velocity: Vec2,
    cov_growth: &Cov2,
    k: usize,
    dt: f64,
) -> GaussianDisc {
    debug_assert!(dt > 0.0);
    let shift = velocity.scaled(k as f64 * dt);
    GaussianDisc {
        mean: disc0.mean + shift,
        cov: disc0.cov + cov_growth.scaled(k as f64),
        radius: disc0.radius,
    }
}
