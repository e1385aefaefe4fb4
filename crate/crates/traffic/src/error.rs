use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid traffic parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("expected {expected} links, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("density {value} on link {link} is outside [0, rho_jam]")]
    DensityOutOfRange { link: usize, value: f64 },
}

pub type Result<T, E = TrafficError> = std::result::Result<T, E>;
