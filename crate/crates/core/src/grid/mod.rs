//! Multi-carrier network model: topology, DC power flow, heat balance and
//! CHP coupling.
//!
//! Electricity is solved with a linearised lossless (DC) power flow around a
//! single slack bus. Heat and gas are lossless supply/demand balances; heat
//! lines only group buses into heat zones that share one pooled balance.

mod dcflow;
mod heat;
mod network;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{BusId, DeviceId, LineId};

pub use dcflow::{detect_congestion, solve_dc_flow};
pub use heat::{chp_outputs, heat_balance, zone_balance};
pub use network::{build_network, validate_topology, Network};

/// Absolute tolerance (MW) for nodal balance checks.
pub const BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Electricity,
    Heat,
    Gas,
}

impl Carrier {
    pub const ALL: [Carrier; 3] = [Carrier::Electricity, Carrier::Heat, Carrier::Gas];

    pub fn tag(self) -> u8 {
        match self {
            Carrier::Electricity => 0,
            Carrier::Heat => 1,
            Carrier::Gas => 2,
        }
    }
}

impl std::fmt::Display for Carrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Carrier::Electricity => "electricity",
            Carrier::Heat => "heat",
            Carrier::Gas => "gas",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub carriers: Vec<Carrier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: LineId,
    pub carrier: Carrier,
    pub from: BusId,
    pub to: BusId,
    /// Per-unit susceptance on the network MVA base. Electricity only.
    #[serde(default)]
    pub susceptance: f64,
    /// Flow limit in MW.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    ThermalGen,
    RenewableGen,
    Chp,
    Load,
    Storage,
}

impl DeviceKind {
    pub fn is_generator(self) -> bool {
        matches!(
            self,
            DeviceKind::ThermalGen | DeviceKind::RenewableGen | DeviceKind::Chp | DeviceKind::Storage
        )
    }
}

/// Operating range of a device on one carrier, in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limit {
    #[serde(default)]
    pub min: f64,
    pub max: f64,
}

impl Limit {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.max(self.min).min(self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    pub id: DeviceId,
    pub bus: BusId,
    pub kind: DeviceKind,
    pub owner: crate::ActorId,
    /// tCO2 per MWh of output.
    #[serde(default)]
    pub emission_rate: f64,
    /// Heat MW per electric MW. CHP only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_power_ratio: Option<f64>,
    #[serde(default)]
    pub limits: BTreeMap<Carrier, Limit>,
}

impl Device {
    pub fn limit(&self, carrier: Carrier) -> Option<Limit> {
        self.limits.get(&carrier).copied()
    }

    pub fn is_clean(&self) -> bool {
        self.emission_rate == 0.0
    }
}

/// Topology section of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub slack_bus: Option<BusId>,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub devices: Vec<Device>,
}

fn default_base_mva() -> f64 {
    100.0
}

/// Net injections (MW, generation positive) at one timestep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Injections {
    pub step: u64,
    pub values: BTreeMap<(BusId, Carrier), f64>,
}

impl Injections {
    pub fn new(step: u64) -> Self {
        Self {
            step,
            values: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, bus: &BusId, carrier: Carrier, mw: f64) {
        *self.values.entry((bus.clone(), carrier)).or_insert(0.0) += mw;
    }

    pub fn get(&self, bus: &BusId, carrier: Carrier) -> f64 {
        self.values.get(&(bus.clone(), carrier)).copied().unwrap_or(0.0)
    }
}

/// Solved electric state for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub step: u64,
    /// Signed flow per electric line in MW, positive in the `from -> to`
    /// direction. Ordered as the network's electric lines.
    pub flows: Vec<(LineId, f64)>,
    /// Bus voltage angles in radians, indexed like `Network::buses`.
    /// Non-electric buses report 0.
    pub angles: Vec<f64>,
    /// Electric injections per bus after the slack absorbed the residual.
    pub injections: Vec<f64>,
    /// MW the slack bus had to add to balance the system.
    pub slack_adjustment: f64,
}

impl FlowSolution {
    pub fn flow(&self, line: &LineId) -> Option<f64> {
        self.flows.iter().find(|(id, _)| id == line).map(|(_, f)| *f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overload {
    pub line: LineId,
    pub flow: f64,
    pub capacity: f64,
    pub overload: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CongestionReport {
    pub step: u64,
    pub entries: Vec<Overload>,
}

impl CongestionReport {
    pub fn is_congested(&self) -> bool {
        !self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} `{id}` references unknown {target} `{missing}`")]
    DanglingReference {
        kind: &'static str,
        id: String,
        target: &'static str,
        missing: String,
    },
    #[error("electric network is disconnected: bus `{0}` is not reachable from the slack bus")]
    Disconnected(BusId),
    #[error("no slack bus designated")]
    NoSlack,
    #[error("slack bus `{0}` hosts no thermal generator")]
    SlackWithoutThermal(BusId),
    #[error("line `{id}`: {reason}")]
    InvalidLine { id: LineId, reason: String },
    #[error("device `{id}`: {reason}")]
    InvalidDevice { id: DeviceId, reason: String },
    #[error("invalid network parameter: {0}")]
    InvalidParameter(String),
    #[error("susceptance matrix is singular (islanded electric network)")]
    SingularMatrix,
    #[error("heat-power ratio must be positive, got {0}")]
    InvalidRatio(f64),
    #[error("heat demand must be non-negative, got {0}")]
    NegativeDemand(f64),
}
