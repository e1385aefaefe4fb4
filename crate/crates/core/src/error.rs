use thiserror::Error;

use crate::ssm::SensorId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate ensemble: every weight is zero")]
    DegenerateEnsemble,
    #[error("sensor {0} has no valid support: fault prior is zero on every particle")]
    NoValidSupport(SensorId),
    #[error("particle {index} became invalid (non-finite state)")]
    ParticleInvalid { index: usize },
    #[error("sensor {0} is not registered")]
    UnregisteredSensor(SensorId),
    #[error("batch time {got} does not follow filter time {current}")]
    TimeMismatch { current: u64, got: u64 },
    #[error("singular innovation covariance")]
    Singular,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
