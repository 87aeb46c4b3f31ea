//! Source attribution by proportional sharing.
//!
//! Electric attribution walks the directed flow graph (lines oriented by the
//! sign of their solved flow) in topological order. Every bus mixes its local
//! generation with its inflows; each outflow and each local load carries the
//! same mix. Heat attribution pools every producer and consumer of a heat zone.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::grid::{Carrier, FlowSolution, Network};
use crate::DeviceId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("flow graph contains a cycle")]
    CyclicFlow,
    #[error("device `{0}` is not part of the network")]
    UnknownDevice(DeviceId),
    #[error("device `{device}` has negative {carrier} output {value}")]
    NegativeOutput {
        device: DeviceId,
        carrier: Carrier,
        value: f64,
    },
    #[error("load `{0}` sits on a bus with no throughflow")]
    Unsupplied(DeviceId),
    #[error("load `{0}` is not in the trace")]
    UnknownLoad(DeviceId),
    #[error("{0} is not traced")]
    UnsupportedCarrier(Carrier),
    #[error("a trace for step {0} is already recorded")]
    DuplicateStep(u64),
}

/// Non-negative generation and consumption per device on one carrier, MW.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CarrierOutputs {
    pub generation: BTreeMap<DeviceId, f64>,
    pub consumption: BTreeMap<DeviceId, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceOutputs {
    pub step: u64,
    pub electricity: CarrierOutputs,
    pub heat: CarrierOutputs,
}

/// Attributed MW per (load, source) on one carrier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Attribution {
    pub loads: BTreeMap<DeviceId, f64>,
    pub shares: BTreeMap<(DeviceId, DeviceId), f64>,
}

impl Attribution {
    /// Sources feeding `load` with their attributed MW.
    pub fn sources_of<'a>(&'a self, load: &'a DeviceId) -> impl Iterator<Item = (&'a DeviceId, f64)> {
        self.shares
            .range((load.clone(), DeviceId::new(""))..)
            .take_while(move |((l, _), _)| l == load)
            .map(|((_, s), mw)| (s, *mw))
    }

    /// Total MW attributed from `source` across every load.
    pub fn delivered_by(&self, source: &DeviceId) -> f64 {
        self.shares
            .iter()
            .filter(|((_, s), _)| s == source)
            .map(|(_, mw)| mw)
            .sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceResult {
    pub step: u64,
    pub electricity: Attribution,
    pub heat: Attribution,
    clean_sources: BTreeSet<DeviceId>,
}

impl TraceResult {
    pub fn attribution(&self, carrier: Carrier) -> Result<&Attribution, TraceError> {
        match carrier {
            Carrier::Electricity => Ok(&self.electricity),
            Carrier::Heat => Ok(&self.heat),
            Carrier::Gas => Err(TraceError::UnsupportedCarrier(carrier)),
        }
    }

    pub fn is_clean_source(&self, device: &DeviceId) -> bool {
        self.clean_sources.contains(device)
    }
}

/// Attributes every load's consumption to the generators that supply it.
pub fn trace_sources(
    network: &Network,
    flow: &FlowSolution,
    outputs: &DeviceOutputs,
) -> Result<TraceResult, TraceError> {
    for (carrier, side) in [
        (Carrier::Electricity, &outputs.electricity),
        (Carrier::Heat, &outputs.heat),
    ] {
        for (device, value) in side.generation.iter().chain(&side.consumption) {
            if network.device(device).is_none() {
                return Err(TraceError::UnknownDevice(device.clone()));
            }
            if value.is_nan() || *value < 0.0 {
                return Err(TraceError::NegativeOutput {
                    device: device.clone(),
                    carrier,
                    value: *value,
                });
            }
        }
    }

    let clean_sources = outputs
        .electricity
        .generation
        .keys()
        .chain(outputs.heat.generation.keys())
        .filter(|d| network.device(d).is_some_and(|dev| dev.is_clean()))
        .cloned()
        .collect();

    Ok(TraceResult {
        step: flow.step,
        electricity: trace_electric(network, flow, &outputs.electricity)?,
        heat: trace_heat(network, &outputs.heat),
        clean_sources,
    })
}

fn trace_electric(
    network: &Network,
    flow: &FlowSolution,
    outputs: &CarrierOutputs,
) -> Result<Attribution, TraceError> {
    let n = network.buses().len();
    let bus_of = |d: &DeviceId| {
        network
            .device(d)
            .and_then(|dev| network.bus_position(&dev.bus))
            .expect("devices validated above")
    };

    // Directed edges (upstream, downstream, MW); zero flows are dropped.
    let mut out_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut in_degree = vec![0usize; n];
    for ((_, f, t), (_, mw)) in network.electric_lines().zip(&flow.flows) {
        let (up, down, mag) = match mw.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => (f, t, *mw),
            Some(std::cmp::Ordering::Less) => (t, f, -mw),
            _ => continue,
        };
        out_edges[up].push((down, mag));
        in_degree[down] += 1;
    }

    let mut mix: Vec<BTreeMap<DeviceId, f64>> = vec![BTreeMap::new(); n];
    let mut throughflow = vec![0.0; n];
    for (dev, mw) in &outputs.generation {
        if *mw > 0.0 {
            let b = bus_of(dev);
            *mix[b].entry(dev.clone()).or_insert(0.0) += mw;
            throughflow[b] += mw;
        }
    }

    let mut queue: VecDeque<usize> = (0..n).filter(|&b| in_degree[b] == 0).collect();
    let mut visited = 0;
    while let Some(bus) = queue.pop_front() {
        visited += 1;
        let total = throughflow[bus];
        let upstream = std::mem::take(&mut mix[bus]);
        for &(down, mag) in &out_edges[bus] {
            if total > 0.0 {
                for (src, mw) in &upstream {
                    *mix[down].entry(src.clone()).or_insert(0.0) += mag * mw / total;
                }
            }
            throughflow[down] += mag;
            in_degree[down] -= 1;
            if in_degree[down] == 0 {
                queue.push_back(down);
            }
        }
        mix[bus] = upstream;
    }
    if visited != n {
        return Err(TraceError::CyclicFlow);
    }

    let mut result = Attribution::default();
    for (load, demand) in &outputs.consumption {
        result.loads.insert(load.clone(), *demand);
        if *demand == 0.0 {
            continue;
        }
        let b = bus_of(load);
        let total: f64 = mix[b].values().sum();
        if !(throughflow[b] > 0.0 && total > 0.0) {
            return Err(TraceError::Unsupplied(load.clone()));
        }
        for (src, mw) in &mix[b] {
            let share = demand * (mw / total);
            if share > 0.0 {
                result.shares.insert((load.clone(), src.clone()), share);
            }
        }
    }
    Ok(result)
}

fn trace_heat(network: &Network, outputs: &CarrierOutputs) -> Attribution {
    let zones = network.heat_zone_count();
    let zone_of = |d: &DeviceId| {
        network
            .device(d)
            .and_then(|dev| network.heat_zone(&dev.bus))
            .expect("devices validated above")
    };
    let mut supply = vec![0.0; zones];
    let mut demand = vec![0.0; zones];
    for (d, mw) in &outputs.generation {
        supply[zone_of(d)] += mw;
    }
    for (d, mw) in &outputs.consumption {
        demand[zone_of(d)] += mw;
    }

    let mut result = Attribution::default();
    for (load, d) in &outputs.consumption {
        result.loads.insert(load.clone(), *d);
        let z = zone_of(load);
        let pool = supply[z].max(demand[z]);
        if *d == 0.0 || pool == 0.0 {
            continue;
        }
        for (src, g) in &outputs.generation {
            if zone_of(src) == z && *g > 0.0 {
                result.shares.insert((load.clone(), src.clone()), d * g / pool);
            }
        }
    }
    result
}

/// Fraction of `load`'s consumption on `carrier` attributed to zero-emission
/// sources. Zero when the load consumed nothing.
pub fn clean_fraction(
    trace: &TraceResult,
    load: &DeviceId,
    carrier: Carrier,
) -> Result<f64, TraceError> {
    let attribution = trace.attribution(carrier)?;
    let total = *attribution
        .loads
        .get(load)
        .ok_or_else(|| TraceError::UnknownLoad(load.clone()))?;
    if total == 0.0 {
        return Ok(0.0);
    }
    let (mut clean, mut dirty) = (0.0, 0.0);
    for (src, mw) in attribution.sources_of(load) {
        if trace.is_clean_source(src) {
            clean += mw;
        } else {
            dirty += mw;
        }
    }
    if dirty == 0.0 {
        return Ok(if clean > 0.0 { 1.0 } else { 0.0 });
    }
    Ok((clean / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StampedTrace {
    pub timestamp: u64,
    pub trace: TraceResult,
}

pub fn stamp_flows(trace: TraceResult, step: u64) -> StampedTrace {
    StampedTrace {
        timestamp: step,
        trace,
    }
}

/// Insertion-ordered record of stamped traces, one per step.
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    records: Vec<StampedTrace>,
    stamps: BTreeSet<u64>,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: StampedTrace) -> Result<(), TraceError> {
        if !self.stamps.insert(record.timestamp) {
            return Err(TraceError::DuplicateStep(record.timestamp));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StampedTrace] {
        &self.records
    }

    /// Clean energy (MWh) delivered to `load` over the recorded steps in
    /// `[from, to)`.
    pub fn clean_energy(
        &self,
        load: &DeviceId,
        carrier: Carrier,
        from: u64,
        to: u64,
        step_hours: f64,
    ) -> Result<f64, TraceError> {
        let mut total = 0.0;
        for rec in self
            .records
            .iter()
            .filter(|r| (from..to).contains(&r.timestamp))
        {
            let attribution = rec.trace.attribution(carrier)?;
            let Some(mw) = attribution.loads.get(load) else {
                continue;
            };
            total += clean_fraction(&rec.trace, load, carrier)? * mw * step_hours;
        }
        Ok(total)
    }
}
