//! Per-step dispatch schedule and grid-side contract validation.
//!
//! Loads follow their demand profiles. Renewable and non-slack thermal units
//! produce exactly what they have sold under executed electric contracts
//! (renewables bounded by their availability profile). CHP units are heat-led:
//! each heat zone's demand is split over its heat-capable units in proportion
//! to their heat maxima, and a CHP's electric output follows from its
//! heat-power ratio. Storage follows its setpoint profile (positive is
//! discharge). The slack generator covers the electric residual.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::grid::{
    chp_outputs, detect_congestion, solve_dc_flow, Carrier, Device, DeviceKind, FlowSolution,
    GridError, Injections, Network,
};
use crate::ledger::{Contract, ContractValidator, RejectReason, Verdict};
use crate::trace::DeviceOutputs;
use crate::DeviceId;

const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("step {step} is outside the horizon of {horizon} steps")]
    OutOfHorizon { step: u64, horizon: u64 },
    #[error("step {step}: slack output {output} MW is outside [{min}, {max}]")]
    SlackOutOfRange {
        step: u64,
        output: f64,
        min: f64,
        max: f64,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Time-indexed inputs and commitments for the whole horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schedule {
    horizon: u64,
    /// Demand profile per (load, carrier).
    demand: BTreeMap<(DeviceId, Carrier), Vec<f64>>,
    /// Available output per renewable unit.
    availability: BTreeMap<DeviceId, Vec<f64>>,
    /// Storage setpoints, positive when discharging.
    storage: BTreeMap<DeviceId, Vec<f64>>,
    /// Scripted demand reductions that apply regardless of congestion.
    scheduled_dr: BTreeMap<DeviceId, Vec<f64>>,
    /// MW sold per (seller device, carrier) by executed contracts.
    sold: BTreeMap<(DeviceId, Carrier), Vec<f64>>,
    /// MW bought per (buyer device, carrier) by executed contracts.
    bought: BTreeMap<(DeviceId, Carrier), Vec<f64>>,
}

impl Schedule {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    fn series(&self) -> Vec<f64> {
        vec![0.0; self.horizon as usize]
    }

    pub fn set_demand(&mut self, device: DeviceId, carrier: Carrier, values: Vec<f64>) {
        self.demand.insert((device, carrier), values);
    }

    pub fn set_availability(&mut self, device: DeviceId, values: Vec<f64>) {
        self.availability.insert(device, values);
    }

    pub fn set_storage(&mut self, device: DeviceId, values: Vec<f64>) {
        self.storage.insert(device, values);
    }

    pub fn add_scheduled_dr(&mut self, device: &DeviceId, from: u64, to: u64, mw: f64) {
        let horizon = self.horizon;
        let series = self
            .scheduled_dr
            .entry(device.clone())
            .or_insert_with(|| vec![0.0; horizon as usize]);
        for t in from..to.min(horizon) {
            series[t as usize] += mw;
        }
    }

    fn at(map: &BTreeMap<(DeviceId, Carrier), Vec<f64>>, d: &DeviceId, c: Carrier, t: u64) -> f64 {
        map.get(&(d.clone(), c))
            .and_then(|v| v.get(t as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// Profiled demand before any demand response.
    pub fn raw_demand(&self, device: &DeviceId, carrier: Carrier, t: u64) -> f64 {
        Self::at(&self.demand, device, carrier, t)
    }

    pub fn scheduled_reduction(&self, device: &DeviceId, t: u64) -> f64 {
        self.scheduled_dr
            .get(device)
            .and_then(|v| v.get(t as usize))
            .copied()
            .unwrap_or(0.0)
    }

    /// Demand after scripted (non-congestion) demand response.
    pub fn demand(&self, device: &DeviceId, carrier: Carrier, t: u64) -> f64 {
        let raw = self.raw_demand(device, carrier, t);
        if carrier == Carrier::Electricity {
            (raw - self.scheduled_reduction(device, t)).max(0.0)
        } else {
            raw
        }
    }

    pub fn availability(&self, device: &DeviceId, t: u64) -> Option<f64> {
        self.availability
            .get(device)
            .and_then(|v| v.get(t as usize))
            .copied()
    }

    pub fn storage_setpoint(&self, device: &DeviceId, t: u64) -> f64 {
        self.storage
            .get(device)
            .and_then(|v| v.get(t as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn sold(&self, device: &DeviceId, carrier: Carrier, t: u64) -> f64 {
        Self::at(&self.sold, device, carrier, t)
    }

    pub fn bought(&self, device: &DeviceId, carrier: Carrier, t: u64) -> f64 {
        Self::at(&self.bought, device, carrier, t)
    }

    /// Records an executed contract over its delivery window.
    pub fn commit(&mut self, contract: &Contract, start: u64) {
        let end = (start + contract.delivery_steps as u64).min(self.horizon);
        let blank = self.series();
        for (map, device) in [
            (&mut self.sold, &contract.seller_device),
            (&mut self.bought, &contract.buyer_device),
        ] {
            let series = map
                .entry((device.clone(), contract.carrier))
                .or_insert_with(|| blank.clone());
            for t in start..end {
                series[t as usize] += contract.quantity;
            }
        }
    }
}

/// Device operating points and nodal injections for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDispatch {
    pub step: u64,
    pub outputs: DeviceOutputs,
    pub injections: Injections,
    pub slack_output: f64,
    /// Heat demand (MW) no producer in the zone could cover.
    pub unserved_heat: f64,
}

impl StepDispatch {
    pub fn total_generation(&self) -> f64 {
        self.outputs.electricity.generation.values().sum()
    }

    pub fn total_load(&self) -> f64 {
        self.outputs.electricity.consumption.values().sum()
    }
}

fn is_slack(network: &Network, device: &Device) -> bool {
    device.id == network.slack_device().id
}

/// MW a seller device can physically or contractually supply at `t`.
pub fn seller_capacity(network: &Network, schedule: &Schedule, device: &Device, carrier: Carrier, t: u64) -> f64 {
    let max = device.limit(carrier).map_or(0.0, |l| l.max);
    match (device.kind, carrier) {
        (DeviceKind::RenewableGen, Carrier::Electricity) if !is_slack(network, device) => {
            schedule.availability(&device.id, t).map_or(max, |a| a.min(max))
        }
        _ => max,
    }
}

/// Computes the operating point of every device at step `t`.
///
/// `dr` holds additional congestion-triggered demand reductions per load.
/// `extra_sale` adds a hypothetical electric sale by one device, used when
/// checking a contract before it is committed.
pub fn dispatch(
    network: &Network,
    schedule: &Schedule,
    t: u64,
    dr: &BTreeMap<DeviceId, f64>,
    extra_sale: Option<(&DeviceId, f64)>,
) -> Result<StepDispatch, DispatchError> {
    if t >= schedule.horizon() {
        return Err(DispatchError::OutOfHorizon {
            step: t,
            horizon: schedule.horizon(),
        });
    }
    let mut outputs = DeviceOutputs {
        step: t,
        ..DeviceOutputs::default()
    };
    let mut injections = Injections::new(t);

    // Heat demand per zone, then heat-led production.
    let zones = network.heat_zone_count();
    let mut zone_demand = vec![0.0; zones];
    let mut zone_capacity = vec![0.0; zones];
    for d in network.devices() {
        let Some(z) = network.heat_zone(&d.bus) else { continue };
        if d.kind == DeviceKind::Load {
            let h = schedule.demand(&d.id, Carrier::Heat, t);
            if h > 0.0 || d.limit(Carrier::Heat).is_some() {
                outputs.heat.consumption.insert(d.id.clone(), h);
                zone_demand[z] += h;
            }
        } else if let Some(l) = d.limit(Carrier::Heat) {
            zone_capacity[z] += l.max.max(0.0);
        }
    }
    let mut unserved_heat = 0.0;
    for z in 0..zones {
        unserved_heat += (zone_demand[z] - zone_capacity[z]).max(0.0);
    }

    let mut electric_other = 0.0;
    let mut electric_load = 0.0;
    for d in network.devices() {
        let z = network.heat_zone(&d.bus).expect("device buses exist");
        let heat_share = match d.limit(Carrier::Heat) {
            Some(l) if d.kind != DeviceKind::Load && zone_capacity[z] > 0.0 => {
                zone_demand[z].min(zone_capacity[z]) * (l.max.max(0.0) / zone_capacity[z])
            }
            _ => 0.0,
        };
        let electric = match d.kind {
            DeviceKind::Load => {
                let raw = schedule.demand(&d.id, Carrier::Electricity, t);
                let cut = dr.get(&d.id).copied().unwrap_or(0.0);
                let e = (raw - cut).max(0.0);
                if e > 0.0 || d.limit(Carrier::Electricity).is_some() {
                    outputs.electricity.consumption.insert(d.id.clone(), e);
                    injections.add(&d.bus, Carrier::Electricity, -e);
                    electric_load += e;
                }
                continue;
            }
            _ if is_slack(network, d) => {
                if heat_share > 0.0 {
                    outputs.heat.generation.insert(d.id.clone(), heat_share);
                }
                continue;
            }
            DeviceKind::Chp => {
                let ratio = d.heat_power_ratio.unwrap_or(1.0);
                let (e, h) = chp_outputs(heat_share, ratio, &d.limits)?;
                outputs.heat.generation.insert(d.id.clone(), h);
                e
            }
            DeviceKind::Storage => {
                let s = schedule.storage_setpoint(&d.id, t);
                if s < 0.0 {
                    outputs.electricity.consumption.insert(d.id.clone(), -s);
                    injections.add(&d.bus, Carrier::Electricity, s);
                    electric_load -= s;
                    continue;
                }
                s
            }
            DeviceKind::RenewableGen | DeviceKind::ThermalGen => {
                if heat_share > 0.0 {
                    outputs.heat.generation.insert(d.id.clone(), heat_share);
                }
                let mut e = schedule.sold(&d.id, Carrier::Electricity, t);
                if let Some((dev, mw)) = extra_sale {
                    if dev == &d.id {
                        e += mw;
                    }
                }
                e
            }
        };
        if d.limit(Carrier::Electricity).is_some() || electric > 0.0 {
            outputs.electricity.generation.insert(d.id.clone(), electric);
            injections.add(&d.bus, Carrier::Electricity, electric);
            electric_other += electric;
        }
    }

    let slack = network.slack_device();
    let slack_output = electric_load - electric_other;
    let limit = slack.limit(Carrier::Electricity).unwrap_or(crate::grid::Limit::new(0.0, f64::INFINITY));
    if slack_output < limit.min - TOLERANCE || slack_output > limit.max + TOLERANCE {
        return Err(DispatchError::SlackOutOfRange {
            step: t,
            output: slack_output,
            min: limit.min,
            max: limit.max,
        });
    }
    let slack_output = slack_output.max(0.0);
    outputs.electricity.generation.insert(slack.id.clone(), slack_output);
    injections.add(&slack.bus, Carrier::Electricity, slack_output);

    Ok(StepDispatch {
        step: t,
        outputs,
        injections,
        slack_output,
        unserved_heat,
    })
}

/// Solves the DC flow for a dispatch.
pub fn solve(network: &Network, d: &StepDispatch) -> Result<FlowSolution, GridError> {
    solve_dc_flow(network, &d.injections)
}

/// Contract validator backed by the dispatch schedule.
pub struct GridValidator<'a> {
    pub network: &'a Network,
    pub schedule: &'a mut Schedule,
}

impl GridValidator<'_> {
    fn check_step(&self, c: &Contract, t: u64) -> Result<(), RejectReason> {
        if t >= self.schedule.horizon() {
            return Err(RejectReason::HorizonEnded);
        }
        let (Some(seller), Some(buyer)) = (
            self.network.device(&c.seller_device),
            self.network.device(&c.buyer_device),
        ) else {
            return Err(RejectReason::Invalid {
                message: "contract references an unknown device".into(),
            });
        };

        let capacity = seller_capacity(self.network, self.schedule, seller, c.carrier, t);
        let sold = self.schedule.sold(&seller.id, c.carrier, t) + c.quantity;
        if sold > capacity + TOLERANCE {
            return Err(RejectReason::DeviceLimit {
                step: t,
                device: seller.id.clone(),
                requested: sold,
                limit: capacity,
            });
        }
        let demand = self.schedule.demand(&buyer.id, c.carrier, t);
        let bought = self.schedule.bought(&buyer.id, c.carrier, t) + c.quantity;
        if bought > demand + TOLERANCE {
            return Err(RejectReason::DeviceLimit {
                step: t,
                device: buyer.id.clone(),
                requested: bought,
                limit: demand,
            });
        }

        let physical = c.carrier == Carrier::Electricity
            && matches!(seller.kind, DeviceKind::RenewableGen | DeviceKind::ThermalGen)
            && !is_slack(self.network, seller);
        if !physical {
            return Ok(());
        }

        let none = BTreeMap::new();
        let grid_err = |e: DispatchError| match e {
            DispatchError::SlackOutOfRange { step, output, .. } => {
                RejectReason::SlackLimit { step, output }
            }
            other => RejectReason::Invalid {
                message: other.to_string(),
            },
        };
        let before = dispatch(self.network, self.schedule, t, &none, None).map_err(grid_err)?;
        let after = dispatch(self.network, self.schedule, t, &none, Some((&seller.id, c.quantity)))
            .map_err(grid_err)?;
        let solve_err = |e: GridError| RejectReason::Invalid {
            message: e.to_string(),
        };
        let before = solve(self.network, &before).map_err(solve_err)?;
        let after = solve(self.network, &after).map_err(solve_err)?;
        let report = detect_congestion(&after, self.network);
        for o in report.entries {
            let previous = before.flow(&o.line).unwrap_or(0.0).abs();
            if o.flow.abs() > previous + TOLERANCE {
                return Err(RejectReason::Congestion {
                    step: t,
                    line: o.line,
                    flow: o.flow,
                    capacity: o.capacity,
                });
            }
        }
        Ok(())
    }
}

impl ContractValidator for GridValidator<'_> {
    fn validate(&self, contract: &Contract, step: u64) -> Verdict {
        for t in step..step + contract.delivery_steps as u64 {
            if let Err(reason) = self.check_step(contract, t) {
                return Verdict::Reject(reason);
            }
        }
        Verdict::Accept
    }

    fn commit(&mut self, contract: &Contract, step: u64) {
        self.schedule.commit(contract, step);
    }
}
