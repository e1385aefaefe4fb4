use faultpf::{
    MeasurementBatch, Purpose, RandomStream, SensorId, SensorModel, SensorRegistry, StateVector,
    TransitionModel,
};

use crate::ctm::{advance, Corridor, CtmFlows, CtmState};
use crate::demand::RampFlowModel;
use crate::error::{Result, TrafficError};
use crate::sensors::{
    gen_gnss_measurements, gen_loop_measurements, FaultGenerator, GnssSensorModel, LoopSensorModel,
    SensorNoise, GNSS_KIND, LOOP_KIND,
};

/// A corridor with its stochastic demand and sensor noise.
///
/// Serves both as the ground-truth simulator and, through [`TransitionModel`],
/// as the particle filter's dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct CorridorModel {
    pub corridor: Corridor,
    pub demand: RampFlowModel,
    pub noise: SensorNoise,
}

impl CorridorModel {
    pub fn new(corridor: Corridor, demand: RampFlowModel, noise: SensorNoise) -> Result<Self> {
        let mut v = corridor.violations();
        v.extend(demand.violations(&corridor));
        v.extend(noise.violations());
        if v.is_empty() {
            Ok(Self {
                corridor,
                demand,
                noise,
            })
        } else {
            Err(TrafficError::InvalidParams(v))
        }
    }

    pub fn len(&self) -> usize {
        self.corridor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corridor.is_empty()
    }

    /// Advance the ground truth with demand drawn from `(seed, TruthDynamics, time, 0)`.
    pub fn step_truth(&self, state: &CtmState, seed: u64) -> Result<(CtmState, CtmFlows)> {
        state.check(&self.corridor)?;
        let mut rng = RandomStream::open(seed, Purpose::TruthDynamics, state.time, 0);
        let (boundary, ramps) = self.demand.sample(state.time, &self.corridor, &mut rng);
        crate::ctm::ctm_step(state, &self.corridor, &ramps, boundary)
    }

    /// Model speeds in m/s, with onramp competition at its mean demand.
    pub fn link_speeds(&self, densities: &[f64], time: u64) -> Vec<f64> {
        let (_, ramps) = self.demand.mean(time, &self.corridor);
        self.corridor.link_speeds(densities, &ramps)
    }

    /// Non-faulty speed model for a GNSS report on `link` at `time`.
    pub fn gnss_sensor_model(&self, link: usize, time: u64) -> GnssSensorModel<'_> {
        let (_, ramp_demand) = self.demand.mean(time, &self.corridor);
        GnssSensorModel {
            corridor: &self.corridor,
            link,
            ramp_demand,
            noise_frac: self.noise.speed_noise_frac,
            sigma_floor: self.noise.speed_sigma_floor,
        }
    }

    pub fn loop_sensor_model(&self, link: usize) -> LoopSensorModel {
        LoopSensorModel {
            link,
            noise_frac: self.noise.loop_noise_frac,
            sigma_floor: self.noise.loop_sigma_floor,
        }
    }

    /// Loop readings on `instrumented` links followed by GNSS reports, link by link.
    pub fn generate_measurements(
        &self,
        state: &CtmState,
        instrumented: &[usize],
        penetration: f64,
        faults: &FaultGenerator,
        seed: u64,
    ) -> MeasurementBatch {
        let mut batch =
            gen_loop_measurements(state, instrumented, self.noise.loop_noise_frac, seed);
        let speeds = self.link_speeds(&state.densities, state.time);
        let gnss = gen_gnss_measurements(
            state,
            &self.corridor,
            &speeds,
            penetration,
            faults,
            self.noise.speed_noise_frac,
            seed,
        );
        batch.readings.extend(gnss.readings);
        batch
    }

    pub fn registry<'a>(&'a self, instrumented: &[usize]) -> TrafficRegistry<'a> {
        TrafficRegistry {
            model: self,
            instrumented: instrumented.to_vec(),
        }
    }
}

impl TransitionModel for CorridorModel {
    fn state_dim(&self) -> usize {
        self.corridor.len()
    }

    fn sample(&self, time: u64, state: &StateVector, stream: &mut RandomStream) -> StateVector {
        let (boundary, ramps) = self.demand.sample(time, &self.corridor, stream);
        let flows = self.corridor.flows(state, &ramps, boundary);
        let current = CtmState::new(state.to_vec(), time);
        StateVector::new(advance(&current, &self.corridor, &flows).densities)
    }
}

/// Binds loop readings on instrumented links and GNSS reports on any link.
pub struct TrafficRegistry<'a> {
    model: &'a CorridorModel,
    instrumented: Vec<usize>,
}

impl SensorRegistry for TrafficRegistry<'_> {
    fn bind(&self, sensor: &SensorId, time: u64) -> Option<Box<dyn SensorModel + '_>> {
        let link = sensor.target as usize;
        if link >= self.model.len() {
            return None;
        }
        match sensor.kind {
            LOOP_KIND if self.instrumented.contains(&link) => {
                Some(Box::new(self.model.loop_sensor_model(link)))
            }
            GNSS_KIND => Some(Box::new(self.model.gnss_sensor_model(link, time))),
            _ => None,
        }
    }
}
