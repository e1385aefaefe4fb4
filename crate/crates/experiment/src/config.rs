//! Scenario configuration (JSON).

use std::path::Path;

use faultpf_traffic::{
    Corridor, CorridorModel, DemandProfile, FaultGenerator, LinkParams, OnrampDemand,
    RampFlowModel, SensorNoise,
};
use serde::{Deserialize, Serialize};

use crate::error::ExperimentError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorConfig {
    /// Time step in seconds.
    pub dt: f64,
    pub links: Vec<LinkParams>,
    /// Links carrying a loop detector.
    pub instrumented: Vec<usize>,
    /// Initial density per link, veh/m.
    pub initial_density: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSettings {
    /// Significance levels swept by `sweep`.
    pub alphas: Vec<f64>,
    pub particles: usize,
    pub resample_threshold: f64,
    /// Fault prior assumed by the filter for GNSS reports.
    pub phi_assumed: f64,
    /// Fault prior for loop detectors.
    pub loop_phi: f64,
    /// Log-normal spread of the initial particle densities.
    pub initial_spread: f64,
    /// Decisions kept in the filter state; `null` keeps the whole run in memory.
    pub history: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Number of simulated steps.
    pub horizon: u64,
    pub corridor: CorridorConfig,
    pub demand: RampFlowModel,
    pub noise: SensorNoise,
    /// Fraction of vehicles sending GNSS reports.
    pub penetration: f64,
    pub faults: FaultGenerator,
    pub detector: DetectorSettings,
    /// Links with true density at or below this floor (veh/m) are left out of MAPE.
    pub mape_floor: f64,
}

impl Default for ScenarioConfig {
    /// 20-link, 8 km freeway from midnight to noon at `dt = 5 s`, with three
    /// onramps, three offramps and two lane-drop bottlenecks that queue
    /// upstream during the morning peak.
    fn default() -> Self {
        let dt = 5.0;
        let n = 20;
        let mut links = vec![LinkParams::default(); n];
        let lane = 2000.0 / 3600.0 * dt;
        links[8].qmax = 3.6 * lane;
        links[16].qmax = 3.0 * lane;
        for i in [4, 10, 14] {
            links[i].onramp = true;
        }
        links[2].offramp_split = 0.05;
        links[7].offramp_split = 0.08;
        links[12].offramp_split = 0.06;

        let ramp = |link, peak: f64| OnrampDemand {
            link,
            profile: DemandProfile {
                points: vec![
                    (0.0, 0.2 * peak),
                    (5.0, 0.3 * peak),
                    (6.5, peak),
                    (8.5, peak),
                    (10.0, 0.5 * peak),
                    (12.0, 0.4 * peak),
                ],
            },
            noise_std: 0.25,
            capacity: 2.0 * lane,
        };
        let demand = RampFlowModel {
            start_hour: 0.0,
            upstream: DemandProfile {
                points: vec![
                    (0.0, 2.0),
                    (5.0, 3.0),
                    (6.5, 8.0),
                    (8.5, 8.2),
                    (10.0, 5.0),
                    (12.0, 4.0),
                ],
            },
            upstream_noise_std: 0.8,
            onramps: vec![ramp(4, 1.3), ramp(10, 1.2), ramp(14, 1.4)],
        };

        Self {
            schema_version: SCHEMA_VERSION,
            seed: 2018,
            horizon: 12 * 3600 / 5,
            corridor: CorridorConfig {
                dt,
                links,
                instrumented: vec![0, 5, 10, 15, 19],
                initial_density: vec![0.01; n],
            },
            demand,
            noise: SensorNoise::default(),
            penetration: 0.02,
            faults: FaultGenerator::default(),
            detector: DetectorSettings {
                alphas: vec![0.001, 0.01, 0.1],
                particles: 1000,
                resample_threshold: 0.5,
                phi_assumed: 0.3,
                loop_phi: 1.0,
                initial_spread: 0.1,
                history: Some(1024),
            },
            mape_floor: 1e-4,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(vec![format!("{}: {e}", path.display())]))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(vec![format!("{}: {e}", path.display())]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every problem with the configuration, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let c = &self.corridor;
        let corridor = Corridor {
            links: c.links.clone(),
            dt: c.dt,
        };
        v.extend(corridor.violations());
        v.extend(self.demand.violations(&corridor));
        v.extend(self.noise.violations());
        v.extend(self.faults.violations());
        for &i in &c.instrumented {
            if i >= c.links.len() {
                v.push(format!("instrumented link {i} does not exist"));
            }
        }
        let mut sorted = c.instrumented.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != c.instrumented.len() {
            v.push("instrumented links must be unique".into());
        }
        if c.initial_density.len() != c.links.len() {
            v.push(format!(
                "initial_density has {} entries for {} links",
                c.initial_density.len(),
                c.links.len()
            ));
        } else {
            for (i, (r, l)) in c.initial_density.iter().zip(&c.links).enumerate() {
                if !(*r >= 0.0 && *r <= l.rho_jam) {
                    v.push(format!("initial density of link {i} outside [0, rho_jam]"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            v.push("penetration must lie in [0, 1]".into());
        }
        let d = &self.detector;
        if d.alphas.is_empty() {
            v.push("at least one alpha is required".into());
        }
        for a in &d.alphas {
            if !(*a > 0.0 && *a < 1.0) {
                v.push(format!("alpha {a} must lie in (0, 1)"));
            }
        }
        if d.particles == 0 {
            v.push("particle count must be positive".into());
        }
        if !(d.resample_threshold > 0.0 && d.resample_threshold <= 1.0) {
            v.push("resample_threshold must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&d.phi_assumed) {
            v.push("phi_assumed must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&d.loop_phi) {
            v.push("loop_phi must lie in [0, 1]".into());
        }
        if !(d.initial_spread >= 0.0) {
            v.push("initial_spread must be nonnegative".into());
        }
        if !(self.mape_floor >= 0.0) {
            v.push("mape_floor must be nonnegative".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::Config(v))
        }
    }

    pub fn corridor_model(&self) -> Result<CorridorModel, ExperimentError> {
        let corridor = Corridor::new(self.corridor.links.clone(), self.corridor.dt)
            .map_err(|e| ExperimentError::Config(vec![e.to_string()]))?;
        CorridorModel::new(corridor, self.demand.clone(), self.noise.clone())
            .map_err(|e| ExperimentError::Config(vec![e.to_string()]))
    }
}
