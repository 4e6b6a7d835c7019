use thiserror::Error;

use crate::matkit::StabilityCertificate;

/// Errors produced by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("closed loop is not stable ({0})")]
    UnstablePolicy(StabilityCertificate),

    #[error("fixed-point iteration did not converge after {iterations} iterations (relative change {change:e})")]
    NotConverged { iterations: usize, change: f64 },

    #[error("initial-state model `{0}` has no sampler")]
    NotSamplable(&'static str),

    #[error("trajectory diverged at step {step}")]
    DivergedTrajectory { step: usize },

    #[error("gradient estimation failed on perturbation {index}: {reason}")]
    EstimationFailed { index: usize, reason: String },

    #[error("covariance estimate is ill-conditioned: sigma_min {sigma_min:e} below floor {floor:e}")]
    IllConditionedCovariance { sigma_min: f64, floor: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
