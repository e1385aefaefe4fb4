//! Loop-detector and GNSS speed sensors: non-faulty densities and generators.

use std::f64::consts::{PI, SQRT_2};

use faultpf::{
    FaultPrior, MeasurementBatch, Purpose, RandomStream, SensorId, SensorModel, SensorReading,
    StateVector,
};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ctm::{Corridor, CtmState};

pub const LOOP_KIND: u16 = 1;
pub const GNSS_KIND: u16 = 2;

/// Density of `N(mean, sd)` truncated to `[0, inf)` and renormalized.
pub fn truncated_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt() * normal_cdf(mean / sd))
}

pub fn truncated_normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln() - normal_cdf(mean / sd).ln()
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

/// Rejection draw from `N(mean, sd)` restricted to `[0, inf)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean.max(0.0);
    }
    for _ in 0..10_000 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + sd * z;
        if x >= 0.0 {
            return x;
        }
    }
    0.0
}

/// Noise settings shared by the generators and the non-faulty models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    /// Loop noise standard deviation as a fraction of the true density.
    pub loop_noise_frac: f64,
    /// Lower bound on the loop model's standard deviation, veh/m.
    pub loop_sigma_floor: f64,
    /// GNSS speed noise standard deviation as a fraction of the true speed.
    pub speed_noise_frac: f64,
    /// Lower bound on the speed model's standard deviation, m/s.
    pub speed_sigma_floor: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            loop_noise_frac: 0.10,
            loop_sigma_floor: 1e-3,
            speed_noise_frac: 0.10,
            speed_sigma_floor: 0.5,
        }
    }
}

impl SensorNoise {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.loop_noise_frac >= 0.0) {
            v.push("loop noise fraction must be nonnegative".into());
        }
        if !(self.speed_noise_frac >= 0.0) {
            v.push("speed noise fraction must be nonnegative".into());
        }
        if !(self.loop_sigma_floor > 0.0) {
            v.push("loop sigma floor must be positive".into());
        }
        if !(self.speed_sigma_floor > 0.0) {
            v.push("speed sigma floor must be positive".into());
        }
        v
    }
}

/// Loop detector on one link: truncated Gaussian around the link density.
#[derive(Clone, Debug)]
pub struct LoopSensorModel {
    pub link: usize,
    pub noise_frac: f64,
    pub sigma_floor: f64,
}

impl LoopSensorModel {
    fn sd(&self, rho: f64) -> f64 {
        (self.noise_frac * rho).max(self.sigma_floor)
    }
}

impl SensorModel for LoopSensorModel {
    fn reading_dim(&self) -> usize {
        1
    }

    fn density(&self, reading: &[f64], state: &StateVector) -> f64 {
        let rho = state[self.link];
        truncated_normal_pdf(reading[0], rho, self.sd(rho))
    }

    fn log_density(&self, reading: &[f64], state: &StateVector) -> f64 {
        let rho = state[self.link];
        truncated_normal_ln_pdf(reading[0], rho, self.sd(rho))
    }
}

/// GNSS speed report on one link: truncated Gaussian around the model speed,
/// `sd = max(noise_frac * speed, sigma_floor)`.
#[derive(Clone, Debug)]
pub struct GnssSensorModel<'a> {
    pub corridor: &'a Corridor,
    pub link: usize,
    /// Mean onramp demand per link at the step the report belongs to.
    pub ramp_demand: Vec<f64>,
    pub noise_frac: f64,
    pub sigma_floor: f64,
}

impl GnssSensorModel<'_> {
    pub fn speed(&self, state: &StateVector) -> f64 {
        self.corridor
            .link_speed(self.link, state, &self.ramp_demand)
    }

    fn sd(&self, speed: f64) -> f64 {
        (self.noise_frac * speed).max(self.sigma_floor)
    }
}

impl SensorModel for GnssSensorModel<'_> {
    fn reading_dim(&self) -> usize {
        1
    }

    fn density(&self, reading: &[f64], state: &StateVector) -> f64 {
        let v = self.speed(state);
        truncated_normal_pdf(reading[0], v, self.sd(v))
    }

    fn log_density(&self, reading: &[f64], state: &StateVector) -> f64 {
        let v = self.speed(state);
        truncated_normal_ln_pdf(reading[0], v, self.sd(v))
    }
}

/// Fault injection for GNSS reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultGenerator {
    /// Probability that a report is non-faulty.
    pub phi_true: f64,
    /// Share of faulty reports that read exactly zero.
    pub zero_prob: f64,
    /// The remaining faulty reports are `N(gauss_mean, gauss_std)` truncated at zero (m/s).
    pub gauss_mean: f64,
    pub gauss_std: f64,
}

impl Default for FaultGenerator {
    fn default() -> Self {
        Self {
            phi_true: 0.7,
            zero_prob: 1.0 / 3.0,
            gauss_mean: 30.0,
            gauss_std: 10.0,
        }
    }
}

impl FaultGenerator {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.phi_true) {
            v.push("phi_true must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.zero_prob) {
            v.push("zero_prob must lie in [0, 1]".into());
        }
        if !(self.gauss_std > 0.0) {
            v.push("gauss_std must be positive".into());
        }
        if !self.gauss_mean.is_finite() {
            v.push("gauss_mean must be finite".into());
        }
        v
    }
}

/// One noisy density reading per instrumented link. Loops are never faulty.
pub fn gen_loop_measurements(
    state: &CtmState,
    instrumented: &[usize],
    noise_frac: f64,
    seed: u64,
) -> MeasurementBatch {
    let readings = instrumented
        .iter()
        .map(|&link| {
            let mut rng = RandomStream::open(seed, Purpose::LoopNoise, state.time, link as u64);
            let rho = state.densities[link];
            SensorReading {
                sensor_id: SensorId::new(LOOP_KIND, link as u32, 0),
                value: vec![sample_truncated_normal(&mut rng, rho, noise_frac * rho)],
                truth_faulty: Some(false),
            }
        })
        .collect();
    MeasurementBatch {
        time: state.time,
        readings,
    }
}

/// GNSS speed reports: a Poisson number of reporting vehicles per link with
/// mean `penetration * rho * L`, each independently faulty with probability
/// `1 - phi_true`.
pub fn gen_gnss_measurements(
    state: &CtmState,
    corridor: &Corridor,
    speeds: &[f64],
    penetration: f64,
    faults: &FaultGenerator,
    speed_noise_frac: f64,
    seed: u64,
) -> MeasurementBatch {
    let mut readings = Vec::new();
    for (link, params) in corridor.links.iter().enumerate() {
        let mut rng = RandomStream::open(seed, Purpose::GnssReports, state.time, link as u64);
        let lambda = penetration * state.densities[link] * params.length;
        let count = if lambda > 0.0 {
            Poisson::new(lambda)
                .map(|p| p.sample(&mut rng) as u32)
                .unwrap_or(0)
        } else {
            0
        };
        let v = speeds[link];
        for seq in 0..count {
            let faulty = rng.random::<f64>() >= faults.phi_true;
            let value = if !faulty {
                sample_truncated_normal(&mut rng, v, speed_noise_frac * v)
            } else if rng.random::<f64>() < faults.zero_prob {
                0.0
            } else {
                sample_truncated_normal(&mut rng, faults.gauss_mean, faults.gauss_std)
            };
            readings.push(SensorReading {
                sensor_id: SensorId::new(GNSS_KIND, link as u32, seq),
                value: vec![value],
                truth_faulty: Some(faulty),
            });
        }
    }
    MeasurementBatch {
        time: state.time,
        readings,
    }
}

/// Constant fault priors per sensor family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficFaultPrior {
    pub loop_phi: f64,
    pub gnss_phi: f64,
}

impl FaultPrior for TrafficFaultPrior {
    fn phi(&self, sensor: &SensorId, _time: u64, _state: &StateVector) -> f64 {
        if sensor.kind == LOOP_KIND {
            self.loop_phi
        } else {
            self.gnss_phi
        }
    }
}
