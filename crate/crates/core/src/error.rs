use thiserror::Error;

/// Errors produced by scenario validation and the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covariance not positive semidefinite: xx={xx}, xy={xy}, yy={yy} (xx*yy - xy^2 = {det:e})")]
    CovarianceNotPsd { xx: f64, xy: f64, yy: f64, det: f64 },

    #[error("chance level delta must lie in (0, 0.5), got {0}")]
    InvalidChanceLevel(f64),

    #[error("erf_inv argument must lie in (-1, 1), got {0}")]
    ErfInvDomain(f64),

    #[error("radius must be finite and nonnegative, got {0}")]
    InvalidRadius(f64),

    #[error("linearization point coincides with the obstacle mean at step {step}")]
    DegenerateLinearization { step: usize },

    #[error("input {index} violates the bound: ({x}, {y}) outside +/-{bound}")]
    InputBound { index: usize, x: f64, y: f64, bound: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("scenario field \"{field}\": {reason}")]
    InvalidScenario { field: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
