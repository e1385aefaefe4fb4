//! State-space model abstractions and weighted empirical distributions.
//!
//! Models are sample-only on the transition side: a [`TransitionModel`] draws
//! a successor state from an explicit [`RandomStream`] and never exposes a
//! transition density. Observation models expose the non-faulty reading
//! density for a single sensor; the joint observation density is the product
//! over sensors.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Base tolerance on `|sum(w) - 1|` for a weight vector to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// [`NORMALIZATION_TOL`] widened by the rounding bound of summing `n` weights.
pub fn normalization_tol(n: usize) -> f64 {
    NORMALIZATION_TOL + n as f64 * f64::EPSILON
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Markov transition kernel, accessed only through sampling.
pub trait TransitionModel: Sync {
    fn state_dim(&self) -> usize;

    /// Draw the state at `time + 1` given `state` at `time`.
    fn sample(&self, time: u64, state: &StateVector, stream: &mut RandomStream) -> StateVector;
}

/// Checked call into [`TransitionModel::sample`].
pub fn sample_transition<M: TransitionModel + ?Sized>(
    model: &M,
    time: u64,
    state: &StateVector,
    stream: &mut RandomStream,
) -> Result<StateVector> {
    if state.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "transition input",
            expected: model.state_dim(),
            got: state.len(),
        });
    }
    let next = model.sample(time, state, stream);
    if next.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "transition output",
            expected: model.state_dim(),
            got: next.len(),
        });
    }
    Ok(next)
}

/// Deterministic identity dynamics.
#[derive(Clone, Copy, Debug)]
pub struct IdentityTransition {
    pub dim: usize,
}

impl TransitionModel for IdentityTransition {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, _time: u64, state: &StateVector, _stream: &mut RandomStream) -> StateVector {
        state.clone()
    }
}

/// Identity of one reporting sensor at one step.
///
/// `kind` names the model family, `target` the entity the sensor observes
/// (a link, a state component) and `seq` separates several reports bound to
/// the same `(kind, target)` within a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorId {
    pub kind: u16,
    pub target: u32,
    pub seq: u32,
}

impl SensorId {
    pub fn new(kind: u16, target: u32, seq: u32) -> Self {
        Self { kind, target, seq }
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind, self.target, self.seq)
    }
}

/// Density of a correctly operating sensor's reading given the state.
pub trait SensorModel: Send + Sync {
    fn reading_dim(&self) -> usize;

    /// Proper probability density over readings for every fixed state.
    fn density(&self, reading: &[f64], state: &StateVector) -> f64;

    /// Natural log of [`SensorModel::density`]. Override when the density
    /// underflows long before its logarithm does.
    fn log_density(&self, reading: &[f64], state: &StateVector) -> f64 {
        self.density(reading, state).ln()
    }
}

impl<T: SensorModel + ?Sized> SensorModel for Box<T> {
    fn reading_dim(&self) -> usize {
        (**self).reading_dim()
    }

    fn density(&self, reading: &[f64], state: &StateVector) -> f64 {
        (**self).density(reading, state)
    }

    fn log_density(&self, reading: &[f64], state: &StateVector) -> f64 {
        (**self).log_density(reading, state)
    }
}

impl<T: SensorModel + ?Sized> SensorModel for std::sync::Arc<T> {
    fn reading_dim(&self) -> usize {
        (**self).reading_dim()
    }

    fn density(&self, reading: &[f64], state: &StateVector) -> f64 {
        (**self).density(reading, state)
    }

    fn log_density(&self, reading: &[f64], state: &StateVector) -> f64 {
        (**self).log_density(reading, state)
    }
}

/// Checked call into [`SensorModel::density`].
pub fn density_nonfaulty<M: SensorModel + ?Sized>(
    model: &M,
    reading: &[f64],
    state: &StateVector,
) -> Result<f64> {
    if reading.len() != model.reading_dim() {
        return Err(Error::DimensionMismatch {
            what: "sensor reading",
            expected: model.reading_dim(),
            got: reading.len(),
        });
    }
    Ok(model.density(reading, state))
}

/// Prior probability that a sensor reports validly, before its reading is seen.
pub trait FaultPrior: Sync {
    fn phi(&self, sensor: &SensorId, time: u64, state: &StateVector) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantFaultPrior(f64);

impl ConstantFaultPrior {
    pub fn new(phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::InvalidConfig(format!(
                "fault prior must lie in [0, 1], got {phi}"
            )));
        }
        Ok(Self(phi))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

impl FaultPrior for ConstantFaultPrior {
    fn phi(&self, _sensor: &SensorId, _time: u64, _state: &StateVector) -> f64 {
        self.0
    }
}

/// Fault prior given by a closure. The closure must return values in `[0, 1]`.
pub struct FnFaultPrior<F>(pub F);

impl<F> FaultPrior for FnFaultPrior<F>
where
    F: Fn(&SensorId, u64, &StateVector) -> f64 + Sync,
{
    fn phi(&self, sensor: &SensorId, time: u64, state: &StateVector) -> f64 {
        (self.0)(sensor, time, state)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorReading {
    pub sensor_id: SensorId,
    pub value: Vec<f64>,
    /// Ground-truth fault tag; only simulations know it and the filter never reads it.
    pub truth_faulty: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MeasurementBatch {
    pub time: u64,
    pub readings: Vec<SensorReading>,
}

impl MeasurementBatch {
    pub fn new(time: u64, readings: Vec<SensorReading>) -> Result<Self> {
        let batch = Self { time, readings };
        batch.check_unique()?;
        Ok(batch)
    }

    pub fn empty(time: u64) -> Self {
        Self {
            time,
            readings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn check_unique(&self) -> Result<()> {
        let mut ids: Vec<SensorId> = self.readings.iter().map(|r| r.sensor_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Contract(format!(
                "sensor {} appears twice in batch {}",
                w[0], self.time
            )));
        }
        Ok(())
    }
}

/// Normalize nonnegative weights to sum to one.
///
/// Weights already within [`normalization_tol`] of unit mass are returned
/// untouched, which makes the operation idempotent bit for bit.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Contract(
            "ensemble needs at least one particle".into(),
        ));
    }
    if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Contract(format!("invalid weight {bad}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateEnsemble);
    }
    if (total - 1.0).abs() <= normalization_tol(weights.len()) {
        return Ok(weights.to_vec());
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Normalize weights held in log scale.
///
/// The maximum is subtracted before exponentiating so products of many small
/// likelihoods survive. `-inf` entries map to zero weight.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.is_empty() {
        return Err(Error::Contract(
            "ensemble needs at least one particle".into(),
        ));
    }
    if log_weights
        .iter()
        .any(|l| l.is_nan() || *l == f64::INFINITY)
    {
        return Err(Error::Contract("log weight is NaN or +inf".into()));
    }
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateEnsemble);
    }
    let scaled: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    normalize_weights(&scaled)
}

pub fn check_normalized(weights: &[f64]) -> Result<()> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0))
        || (total - 1.0).abs() > normalization_tol(weights.len())
    {
        return Err(Error::Contract(format!(
            "weights are not normalized (sum = {total})"
        )));
    }
    Ok(())
}

/// `1 / sum(w^2)` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    check_normalized(weights)?;
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(1.0 / sum_sq)
}

/// Weighted particle approximation of a distribution. Weights always sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<StateVector>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Build from particles and nonnegative (not necessarily normalized) weights.
    pub fn new(particles: Vec<StateVector>, weights: Vec<f64>) -> Result<Self> {
        if particles.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "weight vector",
                expected: particles.len(),
                got: weights.len(),
            });
        }
        let weights = normalize_weights(&weights)?;
        let dim = particles[0].len();
        if let Some(p) = particles.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                what: "particle",
                expected: dim,
                got: p.len(),
            });
        }
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: Vec<StateVector>) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn particles(&self) -> &[StateVector] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn ess(&self) -> f64 {
        let sum_sq: f64 = self.weights.iter().map(|w| w * w).sum();
        1.0 / sum_sq
    }

    pub fn into_parts(self) -> (Vec<StateVector>, Vec<f64>) {
        (self.particles, self.weights)
    }

    pub(crate) fn from_normalized(particles: Vec<StateVector>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(particles.len(), weights.len());
        Self { particles, weights }
    }
}
