//! Run report, its JSON form and the plot-ready CSV time series.
//!
//! The CSV has one row per step per actor with the fixed header
//! `step,actor,balance,f_carbon,f_congestion,clean_fraction`. `f_carbon` and
//! `f_congestion` are period-to-date values; `clean_fraction` is empty for
//! actors without loads.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::contribution::DemandUsage;
use crate::grid::Carrier;
use crate::ledger::{ContractStatus, Digest, RejectReason};
use crate::tokens::{Issuance, IssuanceCause, Right};
use crate::{ActorId, ContractId, DeviceId, LineId};

pub const CSV_HEADER: [&str; 6] = [
    "step",
    "actor",
    "balance",
    "f_carbon",
    "f_congestion",
    "clean_fraction",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub steps: u64,
    pub steps_per_period: u64,
    pub actors: Vec<ActorSummary>,
    pub timeseries: Vec<TimeseriesRow>,
    pub periods: Vec<PeriodSummary>,
    pub congestion_events: Vec<CongestionEvent>,
    pub curtailed_mwh: f64,
    pub unserved_heat_mwh: f64,
    pub contracts: Vec<ContractOutcome>,
    pub issuances: Vec<Issuance>,
    pub fee_pool: u64,
    pub chain: ChainSummary,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSummary {
    pub actor: ActorId,
    pub initial_balance: i64,
    pub final_balance: i64,
    pub fiat: f64,
    pub restricted: bool,
    pub rights: Vec<Right>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub step: u64,
    pub actor: ActorId,
    pub balance: i64,
    pub f_carbon: f64,
    pub f_congestion: f64,
    pub clean_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Carbon,
    Congestion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub actor: ActorId,
    pub step: u64,
    pub kind: FactorKind,
    /// Factor value handed to the token rule.
    pub value: f64,
    pub requested: i64,
    /// Tokens actually applied after caps.
    pub applied: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSummary {
    pub actor: ActorId,
    pub permit: f64,
    pub emitted: f64,
    pub f_supply: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionSummary {
    pub actor: ActorId,
    pub usage: DemandUsage,
    pub f_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub period: u64,
    pub emissions: Vec<EmissionSummary>,
    pub consumption: Vec<ConsumptionSummary>,
    pub settlements: Vec<Settlement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionEvent {
    pub step: u64,
    pub line: LineId,
    pub flow: f64,
    pub capacity: f64,
    /// Demand response shed in reaction, MW.
    pub relieved_mw: f64,
    pub flow_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractOutcome {
    pub id: ContractId,
    pub seller: ActorId,
    pub buyer: ActorId,
    pub carrier: Carrier,
    pub quantity: f64,
    pub submitted_at: u64,
    pub status: ContractStatus,
    pub block: Option<u64>,
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    /// Height of the tip; 0 for a genesis-only chain.
    pub height: u64,
    pub tip: Digest,
    pub verified: bool,
    pub nodes: usize,
    pub nodes_consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    ContractSubmitted { contract: ContractId },
    ContractRefused { contract: ContractId, reason: RejectReason },
    BlockFormed { height: u64, digest: Digest, contracts: Vec<ContractId> },
    ContractExecuted { contract: ContractId, block: u64 },
    ContractCancelled { contract: ContractId, block: u64, reason: RejectReason },
    RightPurchased { actor: ActorId, right: Right, price: u64 },
    FiatExchanged { actor: ActorId, tokens: u64, fiat: f64 },
    ActionFailed { actor: ActorId, message: String },
    Congestion { line: LineId, flow: f64, capacity: f64 },
    DemandResponse { device: DeviceId, actor: ActorId, mw: f64 },
    Factor { actor: ActorId, kind: FactorKind, value: f64 },
    Settlement { actor: ActorId, kind: FactorKind, value: f64, requested: i64, applied: i64 },
    PeriodClosed { period: u64 },
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.timeseries {
            w.write_record([
                r.step.to_string(),
                r.actor.to_string(),
                r.balance.to_string(),
                r.f_carbon.to_string(),
                r.f_congestion.to_string(),
                r.clean_fraction.map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is UTF-8")
    }

    /// Positive carbon and congestion issuances.
    pub fn tokens_issued(&self) -> i64 {
        self.issuances
            .iter()
            .filter(|i| {
                matches!(i.cause, IssuanceCause::CarbonReward | IssuanceCause::CongestionReward)
            })
            .map(|i| i.amount)
            .sum()
    }

    /// Magnitude of carbon levies.
    pub fn tokens_levied(&self) -> i64 {
        self.issuances
            .iter()
            .filter(|i| i.cause == IssuanceCause::CarbonLevy)
            .map(|i| -i.amount)
            .sum()
    }

    pub fn actor(&self, id: &ActorId) -> Option<&ActorSummary> {
        self.actors.iter().find(|a| &a.actor == id)
    }

    /// One-line `key=value` summary printed by `tokengrid run`.
    pub fn summary_line(&self) -> String {
        format!(
            "tokens_issued={} tokens_levied={} congestion_events={} curtailed_mwh={:.3} blocks={} chain_tip={}",
            self.tokens_issued(),
            self.tokens_levied(),
            self.congestion_events.len(),
            self.curtailed_mwh,
            self.chain.height,
            self.chain.tip,
        )
    }
}
