//! Random onramp and upstream boundary demand.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ctm::Corridor;

/// Piecewise-linear demand by time of day, constant beyond the end points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// `(hour of day, veh per step)` knots, sorted by hour.
    pub points: Vec<(f64, f64)>,
}

impl DemandProfile {
    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn at(&self, hour: f64) -> f64 {
        let pts = &self.points;
        let first = pts[0];
        if hour <= first.0 {
            return first.1;
        }
        for w in pts.windows(2) {
            let (h0, v0) = w[0];
            let (h1, v1) = w[1];
            if hour <= h1 {
                if h1 == h0 {
                    return v1;
                }
                return v0 + (v1 - v0) * (hour - h0) / (h1 - h0);
            }
        }
        pts[pts.len() - 1].1
    }

    fn violations(&self, what: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.points.is_empty() {
            v.push(format!("{what}: demand profile is empty"));
            return v;
        }
        if self.points.windows(2).any(|w| w[1].0 < w[0].0) {
            v.push(format!("{what}: demand profile hours must be sorted"));
        }
        if self
            .points
            .iter()
            .any(|(h, d)| !h.is_finite() || !(d.is_finite() && *d >= 0.0))
        {
            v.push(format!(
                "{what}: demand values must be finite and nonnegative"
            ));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnrampDemand {
    pub link: usize,
    pub profile: DemandProfile,
    /// Standard deviation of the per-step demand noise, veh per step.
    pub noise_std: f64,
    /// Largest flow the ramp can deliver in one step.
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampFlowModel {
    /// Time of day at step 0, in hours.
    pub start_hour: f64,
    pub upstream: DemandProfile,
    pub upstream_noise_std: f64,
    pub onramps: Vec<OnrampDemand>,
}

impl RampFlowModel {
    pub fn violations(&self, corridor: &Corridor) -> Vec<String> {
        let mut v = self.upstream.violations("upstream");
        if !(self.upstream_noise_std >= 0.0) {
            v.push("upstream noise must be nonnegative".into());
        }
        if !self.start_hour.is_finite() {
            v.push("start hour must be finite".into());
        }
        for (i, r) in self.onramps.iter().enumerate() {
            let what = format!("onramp {i}");
            v.extend(r.profile.violations(&what));
            match corridor.links.get(r.link) {
                None => v.push(format!("{what}: link {} does not exist", r.link)),
                Some(l) if !l.onramp => v.push(format!("{what}: link {} has no onramp", r.link)),
                _ => {}
            }
            if !(r.noise_std >= 0.0) {
                v.push(format!("{what}: noise must be nonnegative"));
            }
            if !(r.capacity > 0.0) {
                v.push(format!("{what}: capacity must be positive"));
            }
        }
        for link in corridor.onramp_links() {
            let count = self.onramps.iter().filter(|r| r.link == link).count();
            if count != 1 {
                v.push(format!(
                    "link {link} has an onramp but {count} demand definitions"
                ));
            }
        }
        v
    }

    pub fn hour(&self, time: u64, dt: f64) -> f64 {
        self.start_hour + time as f64 * dt / 3600.0
    }

    /// Mean boundary demand and per-link onramp demand for the step starting at `time`.
    pub fn mean(&self, time: u64, corridor: &Corridor) -> (f64, Vec<f64>) {
        let hour = self.hour(time, corridor.dt);
        let mut ramps = vec![0.0; corridor.len()];
        for r in &self.onramps {
            ramps[r.link] = r.profile.at(hour).min(r.capacity);
        }
        (self.upstream.at(hour), ramps)
    }

    /// Draw boundary and onramp demand for the step starting at `time`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        time: u64,
        corridor: &Corridor,
        rng: &mut R,
    ) -> (f64, Vec<f64>) {
        let hour = self.hour(time, corridor.dt);
        let z: f64 = rng.sample(StandardNormal);
        let boundary = (self.upstream.at(hour) + self.upstream_noise_std * z).max(0.0);
        let mut ramps = vec![0.0; corridor.len()];
        for r in &self.onramps {
            let z: f64 = rng.sample(StandardNormal);
            ramps[r.link] = (r.profile.at(hour) + r.noise_std * z).clamp(0.0, r.capacity);
        }
        (boundary, ramps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctm::LinkParams;
    use faultpf::{Purpose, RandomStream};

    fn profile() -> DemandProfile {
        DemandProfile {
            points: vec![(0.0, 2.0), (6.0, 8.0), (9.0, 8.0), (12.0, 5.0)],
        }
    }

    #[test]
    fn profile_interpolates_and_extrapolates() {
        let p = profile();
        assert_eq!(p.at(-1.0), 2.0);
        assert_eq!(p.at(3.0), 5.0);
        assert_eq!(p.at(7.5), 8.0);
        assert_eq!(p.at(10.5), 6.5);
        assert_eq!(p.at(20.0), 5.0);
    }

    #[test]
    fn draws_respect_bounds() {
        let mut links = vec![LinkParams::default(); 3];
        links[1].onramp = true;
        let corridor = Corridor::new(links, 5.0).unwrap();
        let model = RampFlowModel {
            start_hour: 0.0,
            upstream: DemandProfile::constant(0.5),
            upstream_noise_std: 2.0,
            onramps: vec![OnrampDemand {
                link: 1,
                profile: DemandProfile::constant(1.5),
                noise_std: 3.0,
                capacity: 2.0,
            }],
        };
        assert!(model.violations(&corridor).is_empty());
        for k in 0..5000 {
            let mut s = RandomStream::open(1, Purpose::TruthDynamics, k, 0);
            let (b, r) = model.sample(k, &corridor, &mut s);
            assert!(b >= 0.0);
            assert!(r[1] >= 0.0 && r[1] <= 2.0);
            assert_eq!(r[0], 0.0);
            assert_eq!(r[2], 0.0);
        }
    }

    #[test]
    fn violations_catch_unmatched_ramps() {
        let mut links = vec![LinkParams::default(); 3];
        links[2].onramp = true;
        let corridor = Corridor::new(links, 5.0).unwrap();
        let model = RampFlowModel {
            start_hour: 0.0,
            upstream: DemandProfile { points: vec![] },
            upstream_noise_std: 1.0,
            onramps: vec![OnrampDemand {
                link: 1,
                profile: DemandProfile::constant(1.0),
                noise_std: 0.1,
                capacity: 0.0,
            }],
        };
        let v = model.violations(&corridor);
        assert_eq!(v.len(), 4, "{v:?}");
    }
}
