//! Scenario documents: parsing and whole-document validation.
//!
//! A scenario is one UTF-8 JSON object. Validation never stops at the first
//! problem; every error is reported with a dotted path such as
//! `schedule.profiles[2]` or `incentives.beta`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contribution::{StepTable, Thresholds};
use crate::grid::{validate_topology, Carrier, DeviceKind, TopologyConfig};
use crate::ledger::Contract;
use crate::tokens::{Right, TokenRule};
use crate::{ActorId, ContractId, DeviceId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub topology: TopologyConfig,
    pub actors: Vec<ActorConfig>,
    pub incentives: IncentiveConfig,
    pub tokens: TokenConfig,
    pub ledger: LedgerConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub contracts: Vec<ContractConfig>,
    #[serde(default)]
    pub actions: Vec<ActionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub id: ActorId,
    #[serde(default)]
    pub initial_balance: i64,
    pub balance_cap: i64,
    /// Emission allowance per period, tCO2. Suppliers without a permit have
    /// no supply-side carbon factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_permit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncentiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// DR power (MW) to emission-reduction credit.
    pub dr_credit: StepTable,
    /// Relieved power (MW) to congestion factor.
    pub congestion_table: StepTable,
    pub carbon_thresholds: Thresholds,
    pub congestion_thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenConfig {
    pub carbon: TokenRule,
    pub congestion: TokenRule,
    /// Per-period issuance cap; defaults to the carbon rule's `n_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_cap: Option<u64>,
    /// Fiat paid per token exchanged.
    pub fiat_rate: f64,
    #[serde(default)]
    pub right_prices: BTreeMap<Right, u64>,
}

impl TokenConfig {
    pub fn period_cap(&self) -> u64 {
        self.period_cap.unwrap_or(self.carbon.n_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerConfig {
    /// Pending contracts needed to form a block.
    pub block_threshold: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_nodes() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps_per_period: u64,
    pub periods: u64,
    #[serde(default = "default_step_hours")]
    pub step_hours: f64,
    #[serde(default)]
    pub profiles: Vec<ProfileConfig>,
    #[serde(default)]
    pub demand_response: Vec<DemandResponseConfig>,
}

fn default_step_hours() -> f64 {
    1.0
}

impl ScheduleConfig {
    pub fn horizon(&self) -> u64 {
        self.steps_per_period.saturating_mul(self.periods)
    }
}

/// Per-step values for one device and carrier. Loads: demand. Renewables:
/// available output. Storage: setpoint (positive discharges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub device: DeviceId,
    #[serde(default = "default_carrier")]
    pub carrier: Carrier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    /// Cycle `values` when shorter than the horizon.
    #[serde(default)]
    pub repeat: bool,
    /// Half-width of uniform additive noise, MW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

fn default_carrier() -> Carrier {
    Carrier::Electricity
}

impl ProfileConfig {
    /// Noise-free value at step `t`.
    pub fn base_value(&self, t: u64) -> f64 {
        match (&self.values, self.constant) {
            (Some(v), _) if !v.is_empty() => {
                let i = t as usize;
                if self.repeat {
                    v[i % v.len()]
                } else {
                    v.get(i).copied().unwrap_or(0.0)
                }
            }
            (_, Some(c)) => c,
            _ => 0.0,
        }
    }
}

/// Scripted demand response window `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandResponseConfig {
    pub device: DeviceId,
    pub start: u64,
    pub end: u64,
    /// MW shed while active.
    pub reduction: f64,
    /// Only respond in steps where congestion is detected.
    #[serde(default = "yes")]
    pub on_congestion: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractConfig {
    pub id: ContractId,
    pub seller: ActorId,
    pub buyer: ActorId,
    pub seller_device: DeviceId,
    pub buyer_device: DeviceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payer: Option<ActorId>,
    #[serde(default = "default_carrier")]
    pub carrier: Carrier,
    pub quantity: f64,
    pub price: f64,
    #[serde(default)]
    pub fee: u64,
    pub submit_step: u64,
    #[serde(default = "one")]
    pub delivery_steps: u32,
}

fn one() -> u32 {
    1
}

impl ContractConfig {
    pub fn to_contract(&self) -> Contract {
        Contract {
            id: self.id.clone(),
            seller: self.seller.clone(),
            buyer: self.buyer.clone(),
            seller_device: self.seller_device.clone(),
            buyer_device: self.buyer_device.clone(),
            payer: self.payer.clone().unwrap_or_else(|| self.seller.clone()),
            carrier: self.carrier,
            quantity: self.quantity,
            price: self.price,
            fee: self.fee,
            submitted_at: self.submit_step,
            delivery_steps: self.delivery_steps,
        }
    }
}

/// Scripted use of backup reinforcers. Exactly one of `buy_right` and
/// `exchange` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub step: u64,
    pub actor: ActorId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buy_right: Option<Right>,
    /// Tokens to exchange for fiat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("{} validation error(s):\n{}", .0.len(), list(.0))]
    Invalid(Vec<ValidationError>),
}

fn list(errors: &[ValidationError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses and validates a scenario document.
pub fn load_scenario(document: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig =
        serde_json::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let errors = validate(&config);
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ScenarioError::Invalid(errors))
    }
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text)
}

struct Errors(Vec<ValidationError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl FnOnce() -> String) {
        if !ok {
            self.push(path, message());
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Returns every validation error in the document.
pub fn validate(c: &ScenarioConfig) -> Vec<ValidationError> {
    let mut e = Errors(Vec::new());

    for err in validate_topology(&c.topology) {
        e.push("topology", err.to_string());
    }

    let mut actors = BTreeSet::new();
    for (i, a) in c.actors.iter().enumerate() {
        let p = format!("actors[{i}]");
        e.check(actors.insert(a.id.clone()), format!("{p}.id"), || {
            format!("duplicate actor `{}`", a.id)
        });
        e.check(a.balance_cap > 0, format!("{p}.balance_cap"), || {
            format!("must be positive, got {}", a.balance_cap)
        });
        e.check(a.initial_balance <= a.balance_cap, format!("{p}.initial_balance"), || {
            format!("{} exceeds balance_cap {}", a.initial_balance, a.balance_cap)
        });
        if let Some(permit) = a.emission_permit {
            e.check(positive(permit), format!("{p}.emission_permit"), || {
                format!("must be positive, got {permit}")
            });
        }
    }
    for (i, d) in c.topology.devices.iter().enumerate() {
        e.check(actors.contains(&d.owner), format!("topology.devices[{i}].owner"), || {
            format!("unknown actor `{}`", d.owner)
        });
    }

    let inc = &c.incentives;
    e.check(positive(inc.alpha), "incentives.alpha", || {
        format!("must be positive, got {}", inc.alpha)
    });
    for (name, v) in [("beta", inc.beta), ("gamma", inc.gamma), ("sigma", inc.sigma)] {
        e.check(non_negative(v), format!("incentives.{name}"), || {
            format!("must be non-negative, got {v}")
        });
    }
    for (name, t) in [
        ("dr_credit", &inc.dr_credit),
        ("congestion_table", &inc.congestion_table),
    ] {
        e.check(t.is_monotone_from_zero(), format!("incentives.{name}"), || {
            "must be non-decreasing with value 0 at 0".into()
        });
    }
    for (name, t) in [
        ("carbon_thresholds", inc.carbon_thresholds),
        ("congestion_thresholds", inc.congestion_thresholds),
    ] {
        e.check(
            t.upper.is_finite() && t.lower.is_finite() && t.lower < 0.0 && t.upper > 0.0,
            format!("incentives.{name}"),
            || format!("need lower < 0 < upper, got [{}, {}]", t.lower, t.upper),
        );
    }

    for (name, rule) in [("carbon", &c.tokens.carbon), ("congestion", &c.tokens.congestion)] {
        if let Err(err) = rule.validate() {
            e.push(format!("tokens.{name}"), err.to_string());
        }
    }
    e.check(positive(c.tokens.fiat_rate), "tokens.fiat_rate", || {
        format!("must be positive, got {}", c.tokens.fiat_rate)
    });

    e.check(c.ledger.block_threshold >= 1, "ledger.block_threshold", || {
        "must be at least 1".into()
    });
    e.check(c.ledger.nodes >= 1, "ledger.nodes", || "must be at least 1".into());

    validate_schedule(c, &mut e);
    validate_contracts(c, &actors, &mut e);

    let horizon = c.schedule.horizon();
    for (i, a) in c.actions.iter().enumerate() {
        let p = format!("actions[{i}]");
        e.check(a.step < horizon, format!("{p}.step"), || {
            format!("step {} is beyond the horizon of {horizon}", a.step)
        });
        e.check(actors.contains(&a.actor), format!("{p}.actor"), || {
            format!("unknown actor `{}`", a.actor)
        });
        match (a.buy_right, a.exchange) {
            (Some(r), None) => e.check(c.tokens.right_prices.contains_key(&r), format!("{p}.buy_right"), || {
                format!("no price configured for {r:?}")
            }),
            (None, Some(n)) => e.check(n > 0, format!("{p}.exchange"), || "must be positive".into()),
            _ => e.push(p, "exactly one of `buy_right` and `exchange` is required"),
        }
    }

    e.0
}

fn validate_schedule(c: &ScenarioConfig, e: &mut Errors) {
    let s = &c.schedule;
    e.check(s.steps_per_period >= 1, "schedule.steps_per_period", || {
        "must be at least 1".into()
    });
    e.check(s.periods >= 1, "schedule.periods", || "must be at least 1".into());
    e.check(positive(s.step_hours), "schedule.step_hours", || {
        format!("must be positive, got {}", s.step_hours)
    });
    let horizon = s.horizon();
    let devices: BTreeMap<&DeviceId, _> = c.topology.devices.iter().map(|d| (&d.id, d)).collect();

    let mut seen = BTreeSet::new();
    for (i, prof) in s.profiles.iter().enumerate() {
        let p = format!("schedule.profiles[{i}]");
        let label = format!("profile for `{}` ({})", prof.device, prof.carrier);
        e.check(seen.insert((&prof.device, prof.carrier)), &p, || {
            format!("duplicate {label}")
        });
        match devices.get(&prof.device) {
            None => e.push(format!("{p}.device"), format!("unknown device `{}`", prof.device)),
            Some(d) => {
                let ok_kind = match d.kind {
                    DeviceKind::Load => prof.carrier != Carrier::Gas || d.limit(Carrier::Gas).is_some(),
                    DeviceKind::RenewableGen | DeviceKind::Storage => prof.carrier == Carrier::Electricity,
                    _ => false,
                };
                e.check(ok_kind, &p, || {
                    format!("{label}: {:?} devices take no {} profile", d.kind, prof.carrier)
                });
            }
        }
        let allow_negative = devices
            .get(&prof.device)
            .is_some_and(|d| d.kind == DeviceKind::Storage);
        let valid = |v: f64| v.is_finite() && (allow_negative || v >= 0.0);
        match (&prof.values, prof.constant) {
            (Some(values), None) => {
                if prof.repeat {
                    e.check(!values.is_empty(), format!("{p}.values"), || {
                        format!("{label}: repeating profile needs at least one value")
                    });
                } else {
                    e.check(values.len() as u64 >= horizon, format!("{p}.values"), || {
                        format!(
                            "{label} has {} values but the horizon is {horizon} steps",
                            values.len()
                        )
                    });
                }
                if let Some(j) = values.iter().position(|&v| !valid(v)) {
                    e.push(format!("{p}.values[{j}]"), format!("{label}: invalid value {}", values[j]));
                }
            }
            (None, Some(v)) => e.check(valid(v), format!("{p}.constant"), || {
                format!("{label}: invalid value {v}")
            }),
            _ => e.push(&p, format!("{label}: exactly one of `values` and `constant` is required")),
        }
        if let Some(n) = prof.noise {
            e.check(non_negative(n), format!("{p}.noise"), || {
                format!("must be non-negative, got {n}")
            });
        }
    }

    for (i, dr) in s.demand_response.iter().enumerate() {
        let p = format!("schedule.demand_response[{i}]");
        e.check(
            devices.get(&dr.device).is_some_and(|d| d.kind == DeviceKind::Load),
            format!("{p}.device"),
            || format!("`{}` is not a load", dr.device),
        );
        e.check(dr.start < dr.end && dr.end <= horizon, &p, || {
            format!("window [{}, {}) must be non-empty and within {horizon} steps", dr.start, dr.end)
        });
        e.check(positive(dr.reduction), format!("{p}.reduction"), || {
            format!("must be positive, got {}", dr.reduction)
        });
    }
}

fn validate_contracts(c: &ScenarioConfig, actors: &BTreeSet<ActorId>, e: &mut Errors) {
    let horizon = c.schedule.horizon();
    let devices: BTreeMap<&DeviceId, _> = c.topology.devices.iter().map(|d| (&d.id, d)).collect();
    let mut ids = BTreeSet::new();
    for (i, k) in c.contracts.iter().enumerate() {
        let p = format!("contracts[{i}]");
        e.check(ids.insert(&k.id), format!("{p}.id"), || {
            format!("duplicate contract `{}`", k.id)
        });
        for (field, actor) in [("seller", &k.seller), ("buyer", &k.buyer)] {
            e.check(actors.contains(actor), format!("{p}.{field}"), || {
                format!("unknown actor `{actor}`")
            });
        }
        match devices.get(&k.seller_device) {
            None => e.push(format!("{p}.seller_device"), format!("unknown device `{}`", k.seller_device)),
            Some(d) => {
                e.check(d.owner == k.seller, format!("{p}.seller_device"), || {
                    format!("`{}` is owned by `{}`, not the seller", d.id, d.owner)
                });
                e.check(
                    d.kind.is_generator() && d.limit(k.carrier).is_some(),
                    format!("{p}.seller_device"),
                    || format!("`{}` cannot supply {}", d.id, k.carrier),
                );
            }
        }
        match devices.get(&k.buyer_device) {
            None => e.push(format!("{p}.buyer_device"), format!("unknown device `{}`", k.buyer_device)),
            Some(d) => {
                e.check(d.owner == k.buyer, format!("{p}.buyer_device"), || {
                    format!("`{}` is owned by `{}`, not the buyer", d.id, d.owner)
                });
                e.check(d.kind == DeviceKind::Load, format!("{p}.buyer_device"), || {
                    format!("`{}` is not a load", d.id)
                });
            }
        }
        if let Err(msg) = k.to_contract().check() {
            e.push(&p, msg);
        }
        e.check(k.submit_step < horizon, format!("{p}.submit_step"), || {
            format!("step {} is beyond the horizon of {horizon}", k.submit_step)
        });
    }
}
