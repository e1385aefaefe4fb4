//! Stochastic Cell Transmission Model freeway corridor with loop detectors and
//! fault-injected GNSS speed reports.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctm;
pub mod demand;
pub mod error;
pub mod model;
pub mod sensors;

pub use ctm::{
    conservation_residual, ctm_step, interlink_flow, link_speed, merge_supply_split, Corridor,
    CtmFlows, CtmState, LinkParams,
};
pub use demand::{DemandProfile, OnrampDemand, RampFlowModel};
pub use error::TrafficError;
pub use model::{CorridorModel, TrafficRegistry};
pub use sensors::{
    gen_gnss_measurements, gen_loop_measurements, FaultGenerator, GnssSensorModel, LoopSensorModel,
    SensorNoise, TrafficFaultPrior, GNSS_KIND, LOOP_KIND,
};
