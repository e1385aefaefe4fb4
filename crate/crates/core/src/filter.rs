//! Particle filter with per-sensor fault screening.
//!
//! One [`step`] runs:
//!
//! 1. prediction through the transition sampler (weights carry over);
//! 2. for every reading, the particle estimate of the non-faulty predictive
//!    density `sum_p g(y | x_p) phi(x_p) w_p / sum_p phi(x_p) w_p`;
//! 3. rejection of every reading whose estimated density is below `alpha`;
//! 4. a Bayesian update that multiplies in the non-faulty likelihood of the
//!    readings that survived, followed by renormalization;
//! 5. systematic resampling when the effective sample size drops below
//!    `resample_threshold * P`.
//!
//! All readings of a step are screened against the same predicted ensemble.
//! No fault model is needed anywhere: faulty readings are only characterised
//! by being implausible under the non-faulty model.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{Purpose, RandomStream};
use crate::ssm::{
    check_normalized, normalize_log_weights, sample_transition, FaultPrior, MeasurementBatch,
    ParticleEnsemble, SensorId, SensorModel, StateVector, TransitionModel,
};

/// How readings are screened before the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Screening {
    /// Reject readings whose non-faulty density estimate falls below `alpha`.
    #[default]
    HypothesisTest,
    /// Use every reading. Baseline only; decisions still carry the density estimate.
    AcceptAll,
}

/// What [`step`] does when every particle assigns zero likelihood to the accepted readings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    /// Return [`Error::DegenerateEnsemble`].
    #[default]
    Fail,
    /// Keep the predicted ensemble and count the event in [`FilterState::skipped_updates`].
    SkipUpdate,
}

#[derive(Clone)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub particle_count: usize,
    /// Resample when `ESS < resample_threshold * P`.
    pub resample_threshold: f64,
    pub fault_prior: Arc<dyn FaultPrior + Send + Sync>,
    pub screening: Screening,
    pub on_degenerate: DegeneratePolicy,
}

impl std::fmt::Debug for DetectorConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DetectorConfig")
            .field("alpha", &self.alpha)
            .field("particle_count", &self.particle_count)
            .field("resample_threshold", &self.resample_threshold)
            .field("screening", &self.screening)
            .field("on_degenerate", &self.on_degenerate)
            .finish_non_exhaustive()
    }
}

impl DetectorConfig {
    pub fn new(
        alpha: f64,
        particle_count: usize,
        resample_threshold: f64,
        fault_prior: Arc<dyn FaultPrior + Send + Sync>,
    ) -> Result<Self> {
        let cfg = Self {
            alpha,
            particle_count,
            resample_threshold,
            fault_prior,
            screening: Screening::HypothesisTest,
            on_degenerate: DegeneratePolicy::Fail,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_screening(mut self, screening: Screening) -> Self {
        self.screening = screening;
        self
    }

    pub fn with_degenerate_policy(mut self, policy: DegeneratePolicy) -> Self {
        self.on_degenerate = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.particle_count == 0 {
            problems.push("particle count must be positive".to_string());
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            problems.push(format!(
                "resample threshold must lie in (0, 1], got {}",
                self.resample_threshold
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Outcome of screening one reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultDecision {
    pub sensor_id: SensorId,
    pub time: u64,
    /// Estimated non-faulty predictive density at the observed reading.
    pub density_value: f64,
    /// Estimated prior probability that the sensor is non-faulty.
    pub normalizer: f64,
    pub rejected: bool,
    /// The fault prior vanished on every particle, so the density is undefined.
    pub undecidable: bool,
}

/// Resolves the non-faulty model bound to a sensor at a given step.
pub trait SensorRegistry: Sync {
    fn bind(&self, sensor: &SensorId, time: u64) -> Option<Box<dyn SensorModel + '_>>;
}

/// Registry keyed by `(kind, target)`; every `seq` shares the model.
#[derive(Default, Clone)]
pub struct KeyedRegistry {
    models: HashMap<(u16, u32), Arc<dyn SensorModel>>,
}

impl KeyedRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: u16, target: u32, model: Arc<dyn SensorModel>) {
        self.models.insert((kind, target), model);
    }
}

impl SensorRegistry for KeyedRegistry {
    fn bind(&self, sensor: &SensorId, _time: u64) -> Option<Box<dyn SensorModel + '_>> {
        self.models
            .get(&(sensor.kind, sensor.target))
            .map(|m| Box::new(Arc::clone(m)) as Box<dyn SensorModel>)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    ensemble: ParticleEnsemble,
    time: u64,
    history: VecDeque<FaultDecision>,
    history_cap: Option<usize>,
    skipped_updates: u64,
}

impl FilterState {
    /// Start at `time` with an unbounded decision history.
    pub fn new(ensemble: ParticleEnsemble, time: u64) -> Self {
        Self {
            ensemble,
            time,
            history: VecDeque::new(),
            history_cap: None,
            skipped_updates: 0,
        }
    }

    /// Keep only the most recent `cap` decisions.
    pub fn with_history_cap(mut self, cap: usize) -> Self {
        self.history_cap = Some(cap);
        self.trim_history();
        self
    }

    pub fn ensemble(&self) -> &ParticleEnsemble {
        &self.ensemble
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn history(&self) -> &VecDeque<FaultDecision> {
        &self.history
    }

    /// Steps whose update was skipped under [`DegeneratePolicy::SkipUpdate`].
    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    fn with_ensemble(&self, ensemble: ParticleEnsemble, time: u64) -> Self {
        Self {
            ensemble,
            time,
            history: self.history.clone(),
            history_cap: self.history_cap,
            skipped_updates: self.skipped_updates,
        }
    }

    fn record(&mut self, decisions: &[FaultDecision]) {
        self.history.extend(decisions.iter().copied());
        self.trim_history();
    }

    fn trim_history(&mut self) {
        if let Some(cap) = self.history_cap {
            while self.history.len() > cap {
                self.history.pop_front();
            }
        }
    }
}

/// Propagate every particle one step through the transition sampler.
///
/// Particle `p` draws from stream `(seed, Propagate, time + 1, p)`, so the
/// result is independent of thread count.
pub fn predict<M: TransitionModel + ?Sized>(
    state: &FilterState,
    model: &M,
    seed: u64,
) -> Result<FilterState> {
    let time = state.time;
    let next: Vec<StateVector> = state
        .ensemble
        .particles()
        .par_iter()
        .enumerate()
        .map(|(p, x)| {
            let mut stream = RandomStream::open(seed, Purpose::Propagate, time + 1, p as u64);
            let y = sample_transition(model, time, x, &mut stream)?;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::ParticleInvalid { index: p })
            }
        })
        .collect::<Result<_>>()?;
    let weights = state.ensemble.weights().to_vec();
    Ok(state.with_ensemble(ParticleEnsemble::from_normalized(next, weights), time + 1))
}

fn density_estimate(weights: &[f64], likelihood: &[f64], phi: &[f64]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((w, g), f) in weights.iter().zip(likelihood).zip(phi) {
        let prior_mass = f * w;
        num += g * prior_mass;
        den += prior_mass;
    }
    (num, den)
}

/// Particle estimate of the non-faulty predictive density of one reading.
///
/// Returns `(density_value, normalizer)` where the normalizer is the estimated
/// prior probability that the sensor is non-faulty.
pub fn nonfault_density<S: SensorModel + ?Sized, F: FaultPrior + ?Sized>(
    state: &FilterState,
    model: &S,
    prior: &F,
    sensor: &SensorId,
    reading: &[f64],
) -> Result<(f64, f64)> {
    if reading.len() != model.reading_dim() {
        return Err(Error::DimensionMismatch {
            what: "sensor reading",
            expected: model.reading_dim(),
            got: reading.len(),
        });
    }
    let ens = &state.ensemble;
    check_normalized(ens.weights())?;
    let g: Vec<f64> = ens
        .particles()
        .iter()
        .map(|x| model.density(reading, x))
        .collect();
    let phi: Vec<f64> = ens
        .particles()
        .iter()
        .map(|x| prior.phi(sensor, state.time, x))
        .collect();
    let (num, den) = density_estimate(ens.weights(), &g, &phi);
    if den <= 0.0 {
        return Err(Error::NoValidSupport(*sensor));
    }
    Ok((num / den, den))
}

/// `true` when the reading is declared faulty.
pub fn test_sensor(density_value: f64, config: &DetectorConfig) -> bool {
    density_value < config.alpha
}

fn reweight(state: &FilterState, log_lik: impl Fn(usize) -> f64 + Sync) -> Result<FilterState> {
    let ens = &state.ensemble;
    let log_w: Vec<f64> = ens
        .weights()
        .par_iter()
        .enumerate()
        .map(|(p, w)| w.ln() + log_lik(p))
        .collect();
    let weights = normalize_log_weights(&log_w)?;
    Ok(state.with_ensemble(
        ParticleEnsemble::from_normalized(ens.particles().to_vec(), weights),
        state.time,
    ))
}

/// Multiply in the non-faulty likelihood of every accepted reading and renormalize.
pub fn update(state: &FilterState, accepted: &[(&dyn SensorModel, &[f64])]) -> Result<FilterState> {
    check_normalized(state.ensemble.weights())?;
    if accepted.is_empty() {
        return Ok(state.clone());
    }
    for (model, reading) in accepted {
        if reading.len() != model.reading_dim() {
            return Err(Error::DimensionMismatch {
                what: "sensor reading",
                expected: model.reading_dim(),
                got: reading.len(),
            });
        }
    }
    let particles = state.ensemble.particles();
    reweight(state, |p| {
        accepted
            .iter()
            .map(|(model, reading)| model.log_density(reading, &particles[p]))
            .sum()
    })
}

/// Systematic resampling, triggered when `ESS < resample_threshold * P`.
pub fn resample(
    state: &FilterState,
    config: &DetectorConfig,
    stream: &mut RandomStream,
) -> FilterState {
    let ens = &state.ensemble;
    let n = ens.len();
    if ens.ess() >= config.resample_threshold * n as f64 {
        return state.clone();
    }
    let indices = systematic_indices(ens.weights(), stream.uniform());
    let particles = indices
        .into_iter()
        .map(|i| ens.particles()[i].clone())
        .collect();
    state.with_ensemble(
        ParticleEnsemble::from_normalized(particles, vec![1.0 / n as f64; n]),
        state.time,
    )
}

/// Ancestor indices for systematic resampling with offset `u / n`, `u` in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = (u + i as f64) * step;
        while cumulative < target && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// One full predict / screen / update / resample cycle.
///
/// Returns one [`FaultDecision`] per reading, in batch order.
pub fn step<M, R>(
    state: &FilterState,
    batch: &MeasurementBatch,
    transition: &M,
    registry: &R,
    config: &DetectorConfig,
    seed: u64,
) -> Result<(FilterState, Vec<FaultDecision>)>
where
    M: TransitionModel + ?Sized,
    R: SensorRegistry + ?Sized,
{
    if batch.time != state.time + 1 {
        return Err(Error::TimeMismatch {
            current: state.time,
            got: batch.time,
        });
    }
    let predicted = predict(state, transition, seed)?;
    let time = predicted.time;

    let models = batch
        .readings
        .iter()
        .map(|r| {
            let model = registry
                .bind(&r.sensor_id, time)
                .ok_or(Error::UnregisteredSensor(r.sensor_id))?;
            if model.reading_dim() != r.value.len() {
                return Err(Error::DimensionMismatch {
                    what: "sensor reading",
                    expected: model.reading_dim(),
                    got: r.value.len(),
                });
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;

    let particles = predicted.ensemble.particles();
    let weights = predicted.ensemble.weights();
    let prior = config.fault_prior.as_ref();

    // Per particle: (likelihood, log-likelihood, phi) for every reading.
    let terms: Vec<Vec<(f64, f64, f64)>> = particles
        .par_iter()
        .map(|x| {
            batch
                .readings
                .iter()
                .zip(&models)
                .map(|(r, model)| {
                    let g = model.density(&r.value, x);
                    let log_g = if g > 0.0 {
                        g.ln()
                    } else {
                        model.log_density(&r.value, x)
                    };
                    (g, log_g, prior.phi(&r.sensor_id, time, x))
                })
                .collect()
        })
        .collect();

    let mut decisions = Vec::with_capacity(batch.len());
    let mut likelihood = vec![0.0; particles.len()];
    let mut phi = vec![0.0; particles.len()];
    for (j, r) in batch.readings.iter().enumerate() {
        for (p, t) in terms.iter().enumerate() {
            likelihood[p] = t[j].0;
            phi[p] = t[j].2;
        }
        let (num, den) = density_estimate(weights, &likelihood, &phi);
        let decision = if den > 0.0 {
            let density_value = num / den;
            let rejected = match config.screening {
                Screening::HypothesisTest => test_sensor(density_value, config),
                Screening::AcceptAll => false,
            };
            FaultDecision {
                sensor_id: r.sensor_id,
                time,
                density_value,
                normalizer: den,
                rejected,
                undecidable: false,
            }
        } else {
            FaultDecision {
                sensor_id: r.sensor_id,
                time,
                density_value: 0.0,
                normalizer: 0.0,
                rejected: true,
                undecidable: true,
            }
        };
        decisions.push(decision);
    }

    let accepted: Vec<usize> = decisions
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.rejected)
        .map(|(j, _)| j)
        .collect();
    let updated = if accepted.is_empty() {
        predicted
    } else {
        match reweight(&predicted, |p| {
            accepted.iter().map(|&j| terms[p][j].1).sum()
        }) {
            Ok(s) => s,
            Err(Error::DegenerateEnsemble)
                if config.on_degenerate == DegeneratePolicy::SkipUpdate =>
            {
                let mut s = predicted;
                s.skipped_updates += 1;
                s
            }
            Err(e) => return Err(e),
        }
    };

    let mut stream = RandomStream::open(seed, Purpose::Resample, time, 0);
    let mut next = resample(&updated, config, &mut stream);
    next.record(&decisions);
    Ok((next, decisions))
}

/// Weighted mean of the particles.
pub fn posterior_mean(state: &FilterState) -> StateVector {
    let ens = &state.ensemble;
    let mut mean = vec![0.0; ens.dim()];
    for (x, w) in ens.particles().iter().zip(ens.weights()) {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += w * v;
        }
    }
    StateVector::new(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{LinearGaussianModel, LinearSensor};
    use crate::ssm::{ConstantFaultPrior, IdentityTransition, SensorReading};
    use rand::Rng;

    fn prior(phi: f64) -> Arc<dyn FaultPrior + Send + Sync> {
        Arc::new(ConstantFaultPrior::new(phi).unwrap())
    }

    fn config(alpha: f64) -> DetectorConfig {
        DetectorConfig::new(alpha, 4, 0.5, prior(1.0)).unwrap()
    }

    fn scalar_state(values: &[f64], weights: &[f64]) -> FilterState {
        let ps = values.iter().map(|v| StateVector::new(vec![*v])).collect();
        FilterState::new(ParticleEnsemble::new(ps, weights.to_vec()).unwrap(), 0)
    }

    /// Density given by a lookup on the scalar particle value.
    struct TableSensor(Vec<(f64, f64)>);

    impl SensorModel for TableSensor {
        fn reading_dim(&self) -> usize {
            1
        }
        fn density(&self, _reading: &[f64], state: &StateVector) -> f64 {
            self.0.iter().find(|(x, _)| *x == state[0]).unwrap().1
        }
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(0.0, 10, 0.5, prior(1.0)).is_err());
        assert!(DetectorConfig::new(1.0, 10, 0.5, prior(1.0)).is_err());
        assert!(DetectorConfig::new(0.1, 0, 0.5, prior(1.0)).is_err());
        assert!(DetectorConfig::new(0.1, 10, 0.0, prior(1.0)).is_err());
        assert!(DetectorConfig::new(0.1, 10, 1.0, prior(1.0)).is_ok());
    }

    #[test]
    fn hypothesis_test_boundaries() {
        assert!(test_sensor(0.005, &config(0.01)));
        assert!(!test_sensor(0.01, &config(0.01)));
        assert!(!test_sensor(0.5, &config(0.1)));
    }

    #[test]
    fn identity_predict_only_advances_time() {
        let s = scalar_state(&[1.0, 2.0], &[0.3, 0.7]);
        let p = predict(&s, &IdentityTransition { dim: 1 }, 5).unwrap();
        assert_eq!(p.ensemble(), s.ensemble());
        assert_eq!(p.time(), 1);
    }

    #[test]
    fn predict_reports_nonfinite_particles() {
        struct Blowup;
        impl TransitionModel for Blowup {
            fn state_dim(&self) -> usize {
                1
            }
            fn sample(&self, _t: u64, x: &StateVector, _s: &mut RandomStream) -> StateVector {
                StateVector::new(vec![if x[0] > 1.5 { f64::NAN } else { x[0] }])
            }
        }
        let s = scalar_state(&[1.0, 2.0], &[0.5, 0.5]);
        assert_eq!(
            predict(&s, &Blowup, 0).unwrap_err(),
            Error::ParticleInvalid { index: 1 }
        );
    }

    #[test]
    fn nonfault_density_single_particle_is_model_density() {
        let s = scalar_state(&[0.7], &[1.0]);
        let sensor = LinearSensor::scalar(1.0, 1.0).unwrap();
        let id = SensorId::new(0, 0, 0);
        let (d, z) = nonfault_density(
            &s,
            &sensor,
            &ConstantFaultPrior::new(1.0).unwrap(),
            &id,
            &[0.7],
        )
        .unwrap();
        assert!((d - 0.3989422804).abs() < 1e-10);
        assert_eq!(z, 1.0);
    }

    #[test]
    fn constant_prior_factors_out() {
        let s = scalar_state(&[0.0, 1.0, 2.0], &[0.2, 0.3, 0.5]);
        let sensor = LinearSensor::scalar(1.0, 1.0).unwrap();
        let id = SensorId::new(0, 0, 0);
        let (d1, z1) = nonfault_density(
            &s,
            &sensor,
            &ConstantFaultPrior::new(1.0).unwrap(),
            &id,
            &[0.4],
        )
        .unwrap();
        let (d3, z3) = nonfault_density(
            &s,
            &sensor,
            &ConstantFaultPrior::new(0.3).unwrap(),
            &id,
            &[0.4],
        )
        .unwrap();
        assert!((z1 - 1.0).abs() < 1e-15);
        assert!((z3 - 0.3).abs() < 1e-15);
        assert!((d1 - d3).abs() < 1e-15);
        assert_eq!(
            nonfault_density(
                &s,
                &sensor,
                &ConstantFaultPrior::new(0.0).unwrap(),
                &id,
                &[0.4]
            ),
            Err(Error::NoValidSupport(id))
        );
    }

    #[test]
    fn update_examples() {
        let s = scalar_state(&[0.0, 1.0], &[0.5, 0.5]);
        let unchanged = update(&s, &[]).unwrap();
        assert_eq!(unchanged.ensemble().weights(), s.ensemble().weights());

        let table = TableSensor(vec![(0.0, 0.4), (1.0, 0.1)]);
        let r = [0.0];
        let u = update(&s, &[(&table, &r)]).unwrap();
        assert!((u.ensemble().weights()[0] - 0.8).abs() < 1e-12);
        assert!((u.ensemble().weights()[1] - 0.2).abs() < 1e-12);

        let zero = TableSensor(vec![(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(
            update(&s, &[(&zero, &r)]).unwrap_err(),
            Error::DegenerateEnsemble
        );
    }

    #[test]
    fn update_is_order_independent_and_factorizes() {
        let mut rng = RandomStream::open(1, Purpose::Custom(3), 0, 0);
        let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ws: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..1.0)).collect();
        let s = scalar_state(&xs, &ws);
        let a = LinearSensor::scalar(1.0, 0.5).unwrap();
        let b = LinearSensor::scalar(2.0, 1.5).unwrap();
        let (ya, yb) = ([0.3], [-0.8]);
        let joint = update(&s, &[(&a, &ya), (&b, &yb)]).unwrap();
        let swapped = update(&s, &[(&b, &yb), (&a, &ya)]).unwrap();
        let seq = update(&update(&s, &[(&a, &ya)]).unwrap(), &[(&b, &yb)]).unwrap();
        for ((j, w), q) in joint
            .ensemble()
            .weights()
            .iter()
            .zip(swapped.ensemble().weights())
            .zip(seq.ensemble().weights())
        {
            assert!((j - w).abs() < 1e-12);
            assert!((j - q).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_examples() {
        let mut stream = RandomStream::open(0, Purpose::Resample, 0, 0);
        let s = scalar_state(&[1.0, 2.0, 3.0, 4.0], &[0.25; 4]);
        assert_eq!(resample(&s, &config(0.1), &mut stream), s);

        let s = scalar_state(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.0, 0.0]);
        let r = resample(&s, &config(0.1), &mut stream);
        for (x, w) in r.ensemble().particles().iter().zip(r.ensemble().weights()) {
            assert_eq!(x[0], 1.0);
            assert_eq!(*w, 0.25);
        }
    }

    #[test]
    fn systematic_copies_are_within_one_of_expectation() {
        let mut rng = RandomStream::open(2, Purpose::Custom(4), 0, 0);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let w = crate::ssm::normalize_weights(&raw).unwrap();
            let idx = systematic_indices(&w, rng.uniform());
            let mut counts = vec![0usize; n];
            for i in idx {
                counts[i] += 1;
            }
            for (c, wi) in counts.iter().zip(&w) {
                assert!((*c as f64 - n as f64 * wi).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn posterior_mean_examples() {
        assert_eq!(
            posterior_mean(&scalar_state(&[0.0, 2.0], &[0.5, 0.5]))[0],
            1.0
        );
        assert_eq!(posterior_mean(&scalar_state(&[3.5], &[1.0]))[0], 3.5);
    }

    fn gaussian_registry(sigma: f64) -> KeyedRegistry {
        let mut reg = KeyedRegistry::new();
        reg.insert(0, 0, Arc::new(LinearSensor::scalar(1.0, sigma).unwrap()));
        reg
    }

    #[test]
    fn step_with_empty_batch_is_pure_prediction() {
        let s = scalar_state(&[0.0, 1.0], &[0.5, 0.5]);
        let model = LinearGaussianModel::scalar(0.9, 0.04, 1.0, 1.0, 0.0, 1.0).unwrap();
        let cfg = DetectorConfig::new(0.01, 2, 0.5, prior(1.0)).unwrap();
        let (next, decisions) = step(
            &s,
            &MeasurementBatch::empty(1),
            &model,
            &gaussian_registry(1.0),
            &cfg,
            11,
        )
        .unwrap();
        assert!(decisions.is_empty());
        assert_eq!(next, predict(&s, &model, 11).unwrap());
    }

    #[test]
    fn step_rejects_far_reading_and_keeps_prior() {
        let s = scalar_state(&[0.0, 0.5, -0.5], &[0.2, 0.5, 0.3]);
        let cfg = DetectorConfig::new(0.01, 3, 0.5, prior(1.0)).unwrap();
        let reading = SensorReading {
            sensor_id: SensorId::new(0, 0, 0),
            value: vec![10.5],
            truth_faulty: None,
        };
        let batch = MeasurementBatch::new(1, vec![reading]).unwrap();
        let model = IdentityTransition { dim: 1 };
        let (next, d) = step(&s, &batch, &model, &gaussian_registry(1.0), &cfg, 0).unwrap();
        assert!(d[0].rejected && !d[0].undecidable);
        assert!(d[0].density_value < 1e-20);
        assert_eq!(next.ensemble().weights(), s.ensemble().weights());
        assert_eq!(next.history().len(), 1);
    }

    #[test]
    fn degenerate_update_follows_policy() {
        let s = scalar_state(&[0.0, 1.0], &[0.5, 0.5]);
        let mut registry = KeyedRegistry::new();
        registry.insert(0, 0, Arc::new(TableSensor(vec![(0.0, 0.0), (1.0, 0.0)])));
        let reading = SensorReading {
            sensor_id: SensorId::new(0, 0, 0),
            value: vec![0.0],
            truth_faulty: None,
        };
        let batch = MeasurementBatch::new(1, vec![reading]).unwrap();
        let model = IdentityTransition { dim: 1 };
        let cfg = DetectorConfig::new(0.01, 2, 0.5, prior(1.0))
            .unwrap()
            .with_screening(Screening::AcceptAll);
        assert_eq!(
            step(&s, &batch, &model, &registry, &cfg, 0).unwrap_err(),
            Error::DegenerateEnsemble
        );
        let cfg = cfg.with_degenerate_policy(DegeneratePolicy::SkipUpdate);
        let (next, d) = step(&s, &batch, &model, &registry, &cfg, 0).unwrap();
        assert!(!d[0].rejected);
        assert_eq!(next.skipped_updates(), 1);
        assert_eq!(next.ensemble().weights(), s.ensemble().weights());
    }

    #[test]
    fn step_errors() {
        let s = scalar_state(&[0.0], &[1.0]);
        let cfg = DetectorConfig::new(0.01, 1, 0.5, prior(1.0)).unwrap();
        let model = IdentityTransition { dim: 1 };
        let reading = SensorReading {
            sensor_id: SensorId::new(9, 0, 0),
            value: vec![0.0],
            truth_faulty: None,
        };
        let batch = MeasurementBatch::new(1, vec![reading]).unwrap();
        assert_eq!(
            step(&s, &batch, &model, &gaussian_registry(1.0), &cfg, 0).unwrap_err(),
            Error::UnregisteredSensor(SensorId::new(9, 0, 0))
        );
        assert!(matches!(
            step(
                &s,
                &MeasurementBatch::empty(5),
                &model,
                &gaussian_registry(1.0),
                &cfg,
                0
            ),
            Err(Error::TimeMismatch { .. })
        ));
    }

    #[test]
    fn undecidable_sensor_is_rejected() {
        let s = scalar_state(&[0.0], &[1.0]);
        let cfg = DetectorConfig::new(0.01, 1, 0.5, prior(0.0)).unwrap();
        let reading = SensorReading {
            sensor_id: SensorId::new(0, 0, 0),
            value: vec![0.0],
            truth_faulty: None,
        };
        let batch = MeasurementBatch::new(1, vec![reading]).unwrap();
        let (_, d) = step(
            &s,
            &batch,
            &IdentityTransition { dim: 1 },
            &gaussian_registry(1.0),
            &cfg,
            0,
        )
        .unwrap();
        assert!(d[0].rejected && d[0].undecidable);
    }

    #[test]
    fn history_ring_is_bounded() {
        let mut s = scalar_state(&[0.0], &[1.0]).with_history_cap(3);
        let cfg = DetectorConfig::new(0.01, 1, 0.5, prior(1.0)).unwrap();
        let reg = gaussian_registry(1.0);
        for k in 1..=5u64 {
            let readings = (0..2)
                .map(|j| SensorReading {
                    sensor_id: SensorId::new(0, 0, j),
                    value: vec![0.0],
                    truth_faulty: None,
                })
                .collect();
            let batch = MeasurementBatch::new(k, readings).unwrap();
            s = step(&s, &batch, &IdentityTransition { dim: 1 }, &reg, &cfg, 0)
                .unwrap()
                .0;
        }
        assert_eq!(s.history().len(), 3);
        assert_eq!(s.history().back().unwrap().time, 5);
    }
}
