//! Ground-truth simulation and filter runs.

use std::sync::Arc;

use faultpf::{
    posterior_mean, step, DegeneratePolicy, DetectorConfig, FilterState, MeasurementBatch,
    ParticleEnsemble, Purpose, RandomStream, Screening, StateVector,
};
use faultpf_traffic::{CtmState, TrafficFaultPrior};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::{ExperimentError, Result};
use crate::io::{measurement_rows, DecisionRow, MeasurementRow};

/// A simulated realization: states for `k = 0..=horizon` and the readings
/// taken at `k = 1..=horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub states: Vec<CtmState>,
    pub batches: Vec<MeasurementBatch>,
}

impl GroundTruth {
    pub fn truth_rows(&self) -> Vec<(u64, Vec<f64>)> {
        self.states
            .iter()
            .map(|s| (s.time, s.densities.clone()))
            .collect()
    }

    pub fn measurement_rows(&self) -> Result<Vec<MeasurementRow>> {
        measurement_rows(&self.batches)
    }
}

pub fn run_ground_truth(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let model = cfg.corridor_model()?;
    let mut state = CtmState::new(cfg.corridor.initial_density.clone(), 0);
    let mut states = Vec::with_capacity(cfg.horizon as usize + 1);
    let mut batches = Vec::with_capacity(cfg.horizon as usize);
    states.push(state.clone());
    for _ in 0..cfg.horizon {
        let (next, _) = model.step_truth(&state, cfg.seed)?;
        batches.push(model.generate_measurements(
            &next,
            &cfg.corridor.instrumented,
            cfg.penetration,
            &cfg.faults,
            cfg.seed,
        ));
        states.push(next.clone());
        state = next;
    }
    Ok(GroundTruth { states, batches })
}

/// How the filter treats readings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    /// Screen every reading at significance level `alpha`.
    Screened { alpha: f64 },
    /// Use every reading unscreened.
    AcceptAll,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun {
    /// Posterior mean after each step `k = 1..=horizon`.
    pub estimates: Vec<(u64, Vec<f64>)>,
    pub decisions: Vec<DecisionRow>,
    /// Steps whose update was skipped because no particle explained the accepted readings.
    pub skipped_updates: u64,
}

impl FilterRun {
    pub fn rejected_count(&self) -> usize {
        self.decisions.iter().filter(|d| d.rejected).count()
    }
}

/// Log-normal scatter around the configured initial densities, clipped to `[0, rho_jam]`.
pub fn initial_ensemble(cfg: &ScenarioConfig) -> ParticleEnsemble {
    let spread = cfg.detector.initial_spread;
    let links = &cfg.corridor.links;
    let particles: Vec<StateVector> = (0..cfg.detector.particles as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = RandomStream::open(cfg.seed, Purpose::Initialize, 0, p);
            let x = cfg
                .corridor
                .initial_density
                .iter()
                .zip(links)
                .map(|(rho, l)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (rho * (spread * z - 0.5 * spread * spread).exp()).min(l.rho_jam)
                })
                .collect();
            StateVector::new(x)
        })
        .collect();
    ParticleEnsemble::uniform(particles).expect("nonempty ensemble of equal dimension")
}

/// Filter `batches` (one per step `1..=horizon`, in order).
///
/// Decision `sensor_seq` is the reading's position within its step's batch.
pub fn run_filter(
    cfg: &ScenarioConfig,
    batches: &[MeasurementBatch],
    variant: Variant,
) -> Result<FilterRun> {
    cfg.validate()?;
    let model = cfg.corridor_model()?;
    let d = &cfg.detector;
    let prior = Arc::new(TrafficFaultPrior {
        loop_phi: d.loop_phi,
        gnss_phi: d.phi_assumed,
    });
    let (alpha, screening) = match variant {
        Variant::Screened { alpha } => (alpha, Screening::HypothesisTest),
        // The threshold is unused; any valid value will do.
        Variant::AcceptAll => (0.5, Screening::AcceptAll),
    };
    let detector = DetectorConfig::new(alpha, d.particles, d.resample_threshold, prior)
        .map_err(|e| ExperimentError::Config(vec![e.to_string()]))?
        .with_screening(screening)
        .with_degenerate_policy(DegeneratePolicy::SkipUpdate);
    let registry = model.registry(&cfg.corridor.instrumented);

    let mut state = FilterState::new(initial_ensemble(cfg), 0);
    if let Some(cap) = d.history {
        state = state.with_history_cap(cap);
    }
    let mut estimates = Vec::with_capacity(batches.len());
    let mut decisions = Vec::new();
    for batch in batches {
        let (next, made) =
            step(&state, batch, &model, &registry, &detector, cfg.seed).map_err(|source| {
                ExperimentError::Filter {
                    time: batch.time,
                    source,
                }
            })?;
        for (seq, dec) in made.iter().enumerate() {
            decisions.push(DecisionRow {
                k: batch.time,
                sensor_seq: seq,
                link: dec.sensor_id.target as usize,
                density_value: dec.density_value,
                normalizer: dec.normalizer,
                rejected: dec.rejected,
            });
        }
        estimates.push((batch.time, posterior_mean(&next).to_vec()));
        state = next;
    }
    Ok(FilterRun {
        estimates,
        decisions,
        skipped_updates: state.skipped_updates(),
    })
}

/// The same batches with every truth-tagged faulty reading removed.
pub fn without_faults(batches: &[MeasurementBatch]) -> Vec<MeasurementBatch> {
    batches
        .iter()
        .map(|b| MeasurementBatch {
            time: b.time,
            readings: b
                .readings
                .iter()
                .filter(|r| r.truth_faulty != Some(true))
                .cloned()
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            horizon: 60,
            ..Default::default()
        };
        cfg.detector.particles = 50;
        cfg
    }

    #[test]
    fn horizon_zero_has_initial_state_only() {
        let mut cfg = small();
        cfg.horizon = 0;
        let gt = run_ground_truth(&cfg).unwrap();
        assert_eq!(gt.states.len(), 1);
        assert!(gt.batches.is_empty());
    }

    #[test]
    fn zero_penetration_yields_loops_only() {
        let mut cfg = small();
        cfg.penetration = 0.0;
        let gt = run_ground_truth(&cfg).unwrap();
        let rows = gt.measurement_rows().unwrap();
        assert_eq!(rows.len(), 60 * cfg.corridor.instrumented.len());
        assert!(rows.iter().all(|r| r.kind == crate::io::SensorKind::Loop));
    }

    #[test]
    fn truth_tags_do_not_reach_the_filter() {
        let cfg = small();
        let gt = run_ground_truth(&cfg).unwrap();
        let stripped: Vec<_> = gt
            .batches
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.readings.iter_mut().for_each(|r| r.truth_faulty = None);
                b
            })
            .collect();
        let v = Variant::Screened { alpha: 0.01 };
        assert_eq!(
            run_filter(&cfg, &gt.batches, v).unwrap(),
            run_filter(&cfg, &stripped, v).unwrap()
        );
    }

    #[test]
    fn removing_faults_keeps_steps() {
        let cfg = small();
        let gt = run_ground_truth(&cfg).unwrap();
        let clean = without_faults(&gt.batches);
        assert_eq!(clean.len(), gt.batches.len());
        assert!(clean
            .iter()
            .flat_map(|b| &b.readings)
            .all(|r| r.truth_faulty == Some(false)));
    }

    #[test]
    fn initial_ensemble_respects_bounds() {
        let mut cfg = small();
        cfg.detector.initial_spread = 3.0;
        let e = initial_ensemble(&cfg);
        assert_eq!(e.len(), 50);
        for x in e.particles() {
            for (r, l) in x.iter().zip(&cfg.corridor.links) {
                assert!(*r >= 0.0 && *r <= l.rho_jam);
            }
        }
    }
}
