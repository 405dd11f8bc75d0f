use crate::qp::QpStatus;

/// Errors raised by the planning, optimization and simulation layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("time {t} outside segment [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("segment duration {0} s is too short")]
    DegenerateDuration(f64),
    #[error("step width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("footstep list is empty")]
    EmptyFootsteps,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("phase duration {t_new} s does not exceed elapsed time {elapsed} s")]
    DurationBelowElapsed { t_new: f64, elapsed: f64 },
    #[error("QP subproblem failed with status {0:?}")]
    Qp(QpStatus),
}

pub type Result<T> = std::result::Result<T, Error>;
