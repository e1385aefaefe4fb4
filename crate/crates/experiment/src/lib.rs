//! Scenario harness for the fault-screening particle filter on a CTM corridor:
//! ground-truth simulation, filtering, evaluation and significance-level sweeps.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod run;
pub mod sweep;

pub use config::{CorridorConfig, DetectorSettings, ScenarioConfig, SCHEMA_VERSION};
pub use error::{ExperimentError, Result};
pub use io::{DecisionRow, MeasurementRow, SensorKind};
pub use metrics::{evaluate, ConfusionMatrix, Evaluation};
pub use run::{run_filter, run_ground_truth, without_faults, FilterRun, GroundTruth, Variant};
pub use sweep::{sweep_alpha, Cell, CellMetrics, CellResult, SweepReport};
