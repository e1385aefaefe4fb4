//! Particle-filter state estimation with model-free sensor fault rejection.
//!
//! Faulty readings are detected without any model of how sensors fail: the
//! particle ensemble already carries everything needed to estimate the
//! predictive density of a reading under correct operation, and readings that
//! fall below a significance threshold are excluded from the update.
//!
//! - [`ssm`]: state vectors, model traits, weighted ensembles.
//! - [`filter`]: prediction, fault screening, update and resampling.
//! - [`oracle`]: exact Kalman recursion used to validate the particle code.
//! - [`rng`]: counter-based random streams.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filter;
pub mod oracle;
pub mod rng;
pub mod ssm;

pub use error::{Error, Result};
pub use filter::{
    nonfault_density, posterior_mean, predict, resample, step, test_sensor, update,
    DegeneratePolicy, DetectorConfig, FaultDecision, FilterState, KeyedRegistry, Screening,
    SensorRegistry,
};
pub use rng::{Purpose, RandomStream, StreamId};
pub use ssm::{
    density_nonfaulty, effective_sample_size, normalize_weights, sample_transition,
    ConstantFaultPrior, FaultPrior, MeasurementBatch, ParticleEnsemble, SensorId, SensorModel,
    SensorReading, StateVector, TransitionModel,
};
