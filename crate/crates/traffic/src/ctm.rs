//! Cell Transmission Model dynamics.
//!
//! Units: densities in veh/m, flows in veh per time step, speeds stored as
//! dimensionless CFL ratios (`speed * dt / length`). Physical speeds are
//! derived from flow and density as `v = q / (rho * dt)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrafficError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Link length in meters.
    pub length: f64,
    /// Freeflow CFL ratio `v_f * dt / L`, in `(0, 1]`.
    pub vf_norm: f64,
    /// Congestion-wave CFL ratio `w * dt / L`, in `(0, 1)`.
    pub w_norm: f64,
    /// Capacity in veh per step.
    pub qmax: f64,
    /// Jam density in veh/m.
    pub rho_jam: f64,
    #[serde(default)]
    pub onramp: bool,
    /// Fraction of the link outflow leaving through an offramp, in `[0, 1)`.
    #[serde(default)]
    pub offramp_split: f64,
}

impl Default for LinkParams {
    /// Four-lane freeway link: 400 m, 28 m/s freeflow, 6 m/s congestion wave,
    /// 2000 veh/h/lane, 125 veh/km/lane jam density, at `dt = 5 s`.
    fn default() -> Self {
        Self {
            length: 400.0,
            vf_norm: 28.0 * 5.0 / 400.0,
            w_norm: 6.0 * 5.0 / 400.0,
            qmax: 8000.0 / 3600.0 * 5.0,
            rho_jam: 0.5,
            onramp: false,
            offramp_split: 0.0,
        }
    }
}

impl LinkParams {
    pub fn violations(&self, index: usize) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.length > 0.0 && self.length.is_finite()) {
            v.push(format!("link {index}: length must be positive"));
        }
        if !(self.vf_norm > 0.0 && self.vf_norm <= 1.0) {
            v.push(format!("link {index}: vf_norm must lie in (0, 1]"));
        }
        if !(self.w_norm > 0.0 && self.w_norm < 1.0) {
            v.push(format!("link {index}: w_norm must lie in (0, 1)"));
        }
        if !(self.qmax > 0.0 && self.qmax.is_finite()) {
            v.push(format!("link {index}: qmax must be positive"));
        }
        if !(self.rho_jam > 0.0 && self.rho_jam.is_finite()) {
            v.push(format!("link {index}: rho_jam must be positive"));
        }
        if !(self.offramp_split >= 0.0 && self.offramp_split < 1.0) {
            v.push(format!("link {index}: offramp_split must lie in [0, 1)"));
        }
        v
    }

    /// Freeflow speed in m/s.
    pub fn freeflow_speed(&self, dt: f64) -> f64 {
        self.vf_norm * self.length / dt
    }

    /// Sending flow `min(v_f rho L, Q_max)`.
    pub fn demand(&self, rho: f64) -> f64 {
        (self.vf_norm * rho * self.length).min(self.qmax)
    }

    /// Receiving flow `w L (rho_J - rho)`.
    pub fn supply(&self, rho: f64) -> f64 {
        (self.w_norm * self.length * (self.rho_jam - rho)).max(0.0)
    }
}

/// Flow from `up` into `down` when `down` has no onramp.
pub fn interlink_flow(rho_up: f64, rho_down: f64, up: &LinkParams, down: &LinkParams) -> f64 {
    up.demand(rho_up).min(down.supply(rho_down))
}

/// Share a downstream supply between the mainline and an onramp.
///
/// Both demands are served when they fit; otherwise the supply is split in
/// proportion to demand.
pub fn merge_supply_split(supply: f64, mainline_demand: f64, onramp_demand: f64) -> (f64, f64) {
    let total = mainline_demand + onramp_demand;
    if total <= supply {
        return (mainline_demand, onramp_demand);
    }
    let share = supply / total;
    (mainline_demand * share, onramp_demand * share)
}

/// Speed in m/s of a link with density `rho` and total outflow `q_out` over one step.
pub fn link_speed(rho: f64, q_out: f64, params: &LinkParams, dt: f64) -> f64 {
    let vf = params.freeflow_speed(dt);
    if rho <= 0.0 {
        return vf;
    }
    (q_out / (rho * dt)).clamp(0.0, vf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub links: Vec<LinkParams>,
    /// Time step in seconds.
    pub dt: f64,
}

impl Corridor {
    pub fn new(links: Vec<LinkParams>, dt: f64) -> Result<Self> {
        let c = Self { links, dt };
        let v = c.violations();
        if v.is_empty() {
            Ok(c)
        } else {
            Err(TrafficError::InvalidParams(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .links
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.violations(i))
            .collect();
        if self.links.is_empty() {
            v.push("corridor needs at least one link".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push("dt must be positive".into());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn onramp_links(&self) -> impl Iterator<Item = usize> + '_ {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.onramp)
            .map(|(i, _)| i)
    }

    /// Mainline flow leaving link `i` towards `i + 1` (or the exit), and the
    /// onramp flow admitted into `i + 1`.
    fn mainline_out(&self, i: usize, rho: &[f64], ramp_demand: &[f64]) -> (f64, f64) {
        let link = &self.links[i];
        let sending = (1.0 - link.offramp_split) * link.demand(rho[i]);
        if i + 1 == self.links.len() {
            return (sending, 0.0);
        }
        let down = &self.links[i + 1];
        let ramp = if down.onramp { ramp_demand[i + 1] } else { 0.0 };
        merge_supply_split(down.supply(rho[i + 1]), sending, ramp)
    }

    /// Total outflow (mainline plus offramp) of link `i` over one step.
    pub fn link_outflow(&self, i: usize, rho: &[f64], ramp_demand: &[f64]) -> f64 {
        let (q, _) = self.mainline_out(i, rho, ramp_demand);
        q / (1.0 - self.links[i].offramp_split)
    }

    /// Speed of link `i` in m/s.
    pub fn link_speed(&self, i: usize, rho: &[f64], ramp_demand: &[f64]) -> f64 {
        link_speed(
            rho[i],
            self.link_outflow(i, rho, ramp_demand),
            &self.links[i],
            self.dt,
        )
    }

    pub fn link_speeds(&self, rho: &[f64], ramp_demand: &[f64]) -> Vec<f64> {
        (0..self.links.len())
            .map(|i| self.link_speed(i, rho, ramp_demand))
            .collect()
    }

    /// All flows of one step. `ramp_demand` has one entry per link (ignored
    /// where the link has no onramp).
    pub fn flows(&self, rho: &[f64], ramp_demand: &[f64], boundary_demand: f64) -> CtmFlows {
        let n = self.links.len();
        let mut mainline = vec![0.0; n];
        let mut onramp = vec![0.0; n];
        let mut offramp = vec![0.0; n];

        let first = &self.links[0];
        let first_ramp = if first.onramp { ramp_demand[0] } else { 0.0 };
        let (boundary, r0) = merge_supply_split(first.supply(rho[0]), boundary_demand, first_ramp);
        onramp[0] = r0;

        for i in 0..n {
            let (q, r_next) = self.mainline_out(i, rho, ramp_demand);
            mainline[i] = q;
            let beta = self.links[i].offramp_split;
            offramp[i] = if beta > 0.0 {
                q * beta / (1.0 - beta)
            } else {
                0.0
            };
            if i + 1 < n {
                onramp[i + 1] = r_next;
            }
        }
        CtmFlows {
            boundary,
            mainline,
            onramp,
            offramp,
        }
    }
}

/// Realized flows of one CTM step, all in veh per step.
#[derive(Clone, Debug, PartialEq)]
pub struct CtmFlows {
    /// Served upstream boundary inflow into link 0.
    pub boundary: f64,
    /// `mainline[i]`: flow from link `i` to `i + 1`; the last entry leaves the corridor.
    pub mainline: Vec<f64>,
    pub onramp: Vec<f64>,
    pub offramp: Vec<f64>,
}

impl CtmFlows {
    pub fn inflow(&self) -> f64 {
        self.boundary + self.onramp.iter().sum::<f64>()
    }

    pub fn outflow(&self) -> f64 {
        self.mainline.last().copied().unwrap_or(0.0) + self.offramp.iter().sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtmState {
    pub densities: Vec<f64>,
    pub time: u64,
}

impl CtmState {
    pub fn new(densities: Vec<f64>, time: u64) -> Self {
        Self { densities, time }
    }

    pub fn vehicles(&self, corridor: &Corridor) -> f64 {
        self.densities
            .iter()
            .zip(&corridor.links)
            .map(|(r, l)| r * l.length)
            .sum()
    }

    pub fn check(&self, corridor: &Corridor) -> Result<()> {
        if self.densities.len() != corridor.len() {
            return Err(TrafficError::DimensionMismatch {
                expected: corridor.len(),
                got: self.densities.len(),
            });
        }
        for (i, (r, l)) in self.densities.iter().zip(&corridor.links).enumerate() {
            if !(*r >= 0.0 && *r <= l.rho_jam) {
                return Err(TrafficError::DensityOutOfRange { link: i, value: *r });
            }
        }
        Ok(())
    }
}

/// Advance densities one step with the given ramp and boundary demands.
pub fn ctm_step(
    state: &CtmState,
    corridor: &Corridor,
    ramp_demand: &[f64],
    boundary_demand: f64,
) -> Result<(CtmState, CtmFlows)> {
    let n = corridor.len();
    if state.densities.len() != n {
        return Err(TrafficError::DimensionMismatch {
            expected: n,
            got: state.densities.len(),
        });
    }
    if ramp_demand.len() != n {
        return Err(TrafficError::DimensionMismatch {
            expected: n,
            got: ramp_demand.len(),
        });
    }
    let flows = corridor.flows(&state.densities, ramp_demand, boundary_demand);
    Ok((advance(state, corridor, &flows), flows))
}

pub(crate) fn advance(state: &CtmState, corridor: &Corridor, flows: &CtmFlows) -> CtmState {
    let densities = corridor
        .links
        .iter()
        .enumerate()
        .map(|(i, link)| {
            let upstream = if i == 0 {
                flows.boundary
            } else {
                flows.mainline[i - 1]
            };
            let net = upstream - flows.mainline[i] + flows.onramp[i] - flows.offramp[i];
            // vf_norm = 1 can leave -1 ulp when a link empties completely
            (state.densities[i] + net / link.length).max(0.0)
        })
        .collect();
    CtmState {
        densities,
        time: state.time + 1,
    }
}

/// Vehicles gained minus (inflow - outflow); zero up to rounding.
pub fn conservation_residual(
    before: &CtmState,
    after: &CtmState,
    corridor: &Corridor,
    flows: &CtmFlows,
) -> f64 {
    after.vehicles(corridor) - before.vehicles(corridor) - (flows.inflow() - flows.outflow())
}
