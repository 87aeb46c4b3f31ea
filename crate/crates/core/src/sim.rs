//! Discrete-time simulation loop.
//!
//! Every step runs, in order: read profiles, CHP coupling, contract
//! submissions and scripted actions, block formation and execution, flow
//! solve, congestion detection with demand response (followed by a re-solve),
//! tracing, accumulator updates and settlement of triggered thresholds. At the
//! end of each period the carbon factor of every actor is computed from the
//! period's emissions and consumption and settled, residual congestion factor
//! is settled, and issuance counters and rights are reset.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::contribution::{
    congestion_factor, demand_factor, supply_factor, ContributionError, DemandFactorParams,
    DemandUsage, EmissionRecord, FactorAccumulator, SupplyFactorParams, Trigger,
};
use crate::dispatch::{dispatch, solve, DispatchError, GridValidator, Schedule, StepDispatch};
use crate::grid::{build_network, detect_congestion, Carrier, DeviceKind, FlowSolution, GridError, Network};
use crate::ledger::{
    verify_chain, Block, Chain, Contract, ContractStatus, Execution, Ledger, LedgerError, RejectReason,
};
use crate::report::{
    ActorSummary, ChainSummary, CongestionEvent, ConsumptionSummary, ContractOutcome,
    EmissionSummary, Event, EventKind, FactorKind, PeriodSummary, Report, Settlement,
    TimeseriesRow,
};
use crate::scenario::{validate, ActionConfig, DemandResponseConfig, ScenarioConfig};
use crate::tokens::{Account, IssuanceCause, TokenBook, TokenError, TokenRule};
use crate::trace::{clean_fraction, stamp_flows, trace_sources, TraceError, TraceLog};
use crate::{ActorId, ContractId, DeviceId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Grid { step: u64, source: GridError },
    #[error("step {step}: {source}")]
    Dispatch { step: u64, source: DispatchError },
    #[error("step {step}: {source}")]
    Trace { step: u64, source: TraceError },
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Contribution(#[from] ContributionError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("simulation already finished")]
    Finished,
}

/// Balance check of one completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub step: u64,
    pub generation: f64,
    pub load: f64,
    pub congested: bool,
    pub blocks: usize,
}

#[derive(Debug, Clone, Default)]
struct PeriodStats {
    emissions: BTreeMap<ActorId, f64>,
    usage: BTreeMap<ActorId, DemandUsage>,
    congestion: BTreeMap<ActorId, f64>,
    settlements: Vec<Settlement>,
}

/// Mutable state of a running simulation.
pub struct Simulation {
    config: ScenarioConfig,
    seed: u64,
    network: Network,
    schedule: Schedule,
    book: TokenBook,
    ledger: Ledger,
    accumulators: BTreeMap<ActorId, FactorAccumulator>,
    traces: TraceLog,
    events: Vec<Event>,
    step: u64,
    submissions: BTreeMap<u64, Vec<Contract>>,
    actions: BTreeMap<u64, Vec<ActionConfig>>,
    responsive_dr: Vec<DemandResponseConfig>,
    fiat: BTreeMap<ActorId, f64>,
    period: PeriodStats,
    timeseries: Vec<TimeseriesRow>,
    periods: Vec<PeriodSummary>,
    congestion_events: Vec<CongestionEvent>,
    curtailed_mwh: f64,
    unserved_heat_mwh: f64,
    outcomes: BTreeMap<ContractId, ContractOutcome>,
    finished: bool,
}

impl Simulation {
    /// Prepares a run. `seed` overrides the scenario's seed.
    pub fn new(config: &ScenarioConfig, seed: Option<u64>) -> Result<Self, SimError> {
        let errors = validate(config);
        if !errors.is_empty() {
            let joined: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
            return Err(SimError::Config(joined.join("; ")));
        }
        let config = config.clone();
        let seed = seed.unwrap_or(config.seed);
        let network = build_network(&config.topology)
            .map_err(|source| SimError::Grid { step: 0, source })?;
        let horizon = config.schedule.horizon();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut schedule = Schedule::new(horizon);
        for prof in &config.schedule.profiles {
            let device = network.device(&prof.device).expect("validated");
            let storage = device.kind == DeviceKind::Storage;
            let values: Vec<f64> = (0..horizon)
                .map(|t| {
                    let base = prof.base_value(t);
                    let v = match prof.noise {
                        Some(n) if n > 0.0 => base + rng.random_range(-n..=n),
                        _ => base,
                    };
                    if storage {
                        v
                    } else {
                        v.max(0.0)
                    }
                })
                .collect();
            match device.kind {
                DeviceKind::Load => schedule.set_demand(prof.device.clone(), prof.carrier, values),
                DeviceKind::RenewableGen => schedule.set_availability(prof.device.clone(), values),
                DeviceKind::Storage => schedule.set_storage(prof.device.clone(), values),
                _ => unreachable!("profile kinds are validated"),
            }
        }
        let mut responsive_dr = Vec::new();
        for dr in &config.schedule.demand_response {
            if dr.on_congestion {
                responsive_dr.push(dr.clone());
            } else {
                schedule.add_scheduled_dr(&dr.device, dr.start, dr.end, dr.reduction);
            }
        }

        let period_cap = config.tokens.period_cap();
        let accounts = config
            .actors
            .iter()
            .map(|a| Account::new(a.id.clone(), a.initial_balance, a.balance_cap, period_cap))
            .collect::<Result<Vec<_>, _>>()?;
        let book = TokenBook::new(accounts);
        let ledger = Ledger::new(config.ledger.block_threshold, config.ledger.nodes)?;
        let inc = &config.incentives;
        let accumulators = config
            .actors
            .iter()
            .map(|a| {
                (
                    a.id.clone(),
                    FactorAccumulator::new(
                        a.id.clone(),
                        inc.carbon_thresholds,
                        inc.congestion_thresholds,
                    ),
                )
            })
            .collect();
        let mut submissions: BTreeMap<u64, Vec<Contract>> = BTreeMap::new();
        for c in &config.contracts {
            submissions
                .entry(c.submit_step)
                .or_default()
                .push(c.to_contract());
        }
        let mut actions: BTreeMap<u64, Vec<ActionConfig>> = BTreeMap::new();
        for a in &config.actions {
            actions.entry(a.step).or_default().push(a.clone());
        }
        let fiat = config.actors.iter().map(|a| (a.id.clone(), 0.0)).collect();

        Ok(Self {
            config,
            seed,
            network,
            schedule,
            book,
            ledger,
            accumulators,
            traces: TraceLog::new(),
            events: Vec::new(),
            step: 0,
            submissions,
            actions,
            responsive_dr,
            fiat,
            period: PeriodStats::default(),
            timeseries: Vec::new(),
            periods: Vec::new(),
            congestion_events: Vec::new(),
            curtailed_mwh: 0.0,
            unserved_heat_mwh: 0.0,
            outcomes: BTreeMap::new(),
            finished: false,
        })
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn horizon(&self) -> u64 {
        self.schedule.horizon()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.horizon()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn book(&self) -> &TokenBook {
        &self.book
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn traces(&self) -> &TraceLog {
        &self.traces
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn accumulator(&self, actor: &ActorId) -> Option<&FactorAccumulator> {
        self.accumulators.get(actor)
    }

    fn emit(&mut self, kind: EventKind) {
        self.events.push(Event {
            step: self.step,
            kind,
        });
    }

    fn owner(&self, device: &DeviceId) -> ActorId {
        self.network
            .device(device)
            .map(|d| d.owner.clone())
            .expect("devices are validated")
    }

    /// Advances the simulation by one step.
    pub fn step(&mut self) -> Result<StepSummary, SimError> {
        if self.is_done() {
            return Err(SimError::Finished);
        }
        let t = self.step;
        let hours = self.config.schedule.step_hours;

        // Profiles and CHP coupling are evaluated inside dispatch from the
        // pre-sampled schedule.
        self.submit_and_act(t);
        let blocks = self.form_and_execute(t);

        let none = BTreeMap::new();
        let base = self.dispatch(t, &none)?;
        let base_flow = self.solve(t, &base)?;
        let report = detect_congestion(&base_flow, &self.network);

        let (final_dispatch, final_flow, relieved) = if report.is_congested() {
            for o in &report.entries {
                self.emit(EventKind::Congestion {
                    line: o.line.clone(),
                    flow: o.flow,
                    capacity: o.capacity,
                });
            }
            let cuts = self.responsive_cuts(t, &base);
            let relieved: BTreeMap<ActorId, f64> = cuts.iter().fold(BTreeMap::new(), |mut m, (d, mw)| {
                *m.entry(self.owner(d)).or_insert(0.0) += mw;
                m
            });
            for (device, mw) in &cuts {
                let actor = self.owner(device);
                self.emit(EventKind::DemandResponse {
                    device: device.clone(),
                    actor,
                    mw: *mw,
                });
            }
            let (d, f) = if cuts.is_empty() {
                (base, base_flow.clone())
            } else {
                let d = self.dispatch(t, &cuts)?;
                let f = self.solve(t, &d)?;
                (d, f)
            };
            let total: f64 = cuts.values().sum();
            for o in &report.entries {
                self.congestion_events.push(CongestionEvent {
                    step: t,
                    line: o.line.clone(),
                    flow: o.flow,
                    capacity: o.capacity,
                    relieved_mw: total,
                    flow_after: f.flow(&o.line).unwrap_or(0.0),
                });
            }
            (d, f, Some((relieved, cuts)))
        } else {
            (base, base_flow, None)
        };

        let trace = trace_sources(&self.network, &final_flow, &final_dispatch.outputs)
            .map_err(|source| SimError::Trace { step: t, source })?;

        // Accumulate period statistics.
        let mut clean_by_actor: BTreeMap<ActorId, (f64, f64)> = BTreeMap::new();
        let mut dr_by_actor: BTreeMap<ActorId, f64> = BTreeMap::new();
        for d in self.network.devices() {
            let owner = d.owner.clone();
            match d.kind {
                DeviceKind::Load => {
                    let usage = self.period.usage.entry(owner.clone()).or_default();
                    for carrier in [Carrier::Electricity, Carrier::Heat] {
                        let side = match carrier {
                            Carrier::Electricity => &final_dispatch.outputs.electricity,
                            _ => &final_dispatch.outputs.heat,
                        };
                        let Some(&mw) = side.consumption.get(&d.id) else { continue };
                        let frac = clean_fraction(&trace, &d.id, carrier)
                            .map_err(|source| SimError::Trace { step: t, source })?;
                        let (clean, total) = match carrier {
                            Carrier::Electricity => (&mut usage.clean_e, &mut usage.total_e),
                            _ => (&mut usage.clean_h, &mut usage.total_h),
                        };
                        *total += mw * hours;
                        *clean += (frac * mw * hours).min(*total);
                        if carrier == Carrier::Electricity {
                            let e = clean_by_actor.entry(owner.clone()).or_insert((0.0, 0.0));
                            e.0 += frac * mw;
                            e.1 += mw;
                        }
                    }
                    let scheduled = self
                        .schedule
                        .scheduled_reduction(&d.id, t)
                        .min(self.schedule.raw_demand(&d.id, Carrier::Electricity, t));
                    let responsive = relieved
                        .as_ref()
                        .and_then(|(_, cuts)| cuts.get(&d.id).copied())
                        .unwrap_or(0.0);
                    *dr_by_actor.entry(owner).or_insert(0.0) += scheduled + responsive;
                }
                _ => {
                    let mw = final_dispatch
                        .outputs
                        .electricity
                        .generation
                        .get(&d.id)
                        .copied()
                        .unwrap_or(0.0)
                        + final_dispatch.outputs.heat.generation.get(&d.id).copied().unwrap_or(0.0);
                    *self.period.emissions.entry(owner).or_insert(0.0) += d.emission_rate * mw * hours;
                }
            }
        }
        for (actor, dr) in dr_by_actor {
            let usage = self.period.usage.entry(actor).or_default();
            usage.dr_power = usage.dr_power.max(dr);
        }
        self.unserved_heat_mwh += final_dispatch.unserved_heat * hours;
        self.traces
            .append(stamp_flows(trace, t))
            .map_err(|source| SimError::Trace { step: t, source })?;

        // Congestion factors for responding actors, then settle triggers.
        let mut triggers: Vec<(ActorId, Trigger)> = Vec::new();
        if let Some((relieved, _)) = &relieved {
            let table = self.config.incentives.congestion_table.clone();
            for (actor, mw) in relieved {
                let delta = congestion_factor(*mw, true, &table);
                if delta == 0.0 {
                    continue;
                }
                *self.period.congestion.entry(actor.clone()).or_insert(0.0) += delta;
                self.emit(EventKind::Factor {
                    actor: actor.clone(),
                    kind: FactorKind::Congestion,
                    value: delta,
                });
                let acc = self.accumulators.get_mut(actor).expect("actor accumulator");
                if let Some(trigger) = acc.congestion.accumulate(delta) {
                    triggers.push((actor.clone(), trigger));
                }
            }
        }
        for (actor, trigger) in triggers {
            self.settle(&actor, FactorKind::Congestion, trigger.value)?;
        }

        let spp = self.config.schedule.steps_per_period;
        if (t + 1).is_multiple_of(spp) {
            self.close_period(t / spp)?;
            self.record_timeseries(t, &clean_by_actor, true)?;
        } else {
            self.record_timeseries(t, &clean_by_actor, false)?;
        }

        let summary = StepSummary {
            step: t,
            generation: final_dispatch.total_generation(),
            load: final_dispatch.total_load(),
            congested: report.is_congested(),
            blocks,
        };
        self.step += 1;
        Ok(summary)
    }

    fn dispatch(&self, t: u64, dr: &BTreeMap<DeviceId, f64>) -> Result<StepDispatch, SimError> {
        dispatch(&self.network, &self.schedule, t, dr, None)
            .map_err(|source| SimError::Dispatch { step: t, source })
    }

    fn solve(&self, t: u64, d: &StepDispatch) -> Result<FlowSolution, SimError> {
        solve(&self.network, d).map_err(|source| SimError::Grid { step: t, source })
    }

    /// Congestion-triggered reductions active at `t`, limited to each load's
    /// remaining demand and to what the slack can give back.
    fn responsive_cuts(&self, t: u64, base: &StepDispatch) -> BTreeMap<DeviceId, f64> {
        let slack_min = self
            .network
            .slack_device()
            .limit(Carrier::Electricity)
            .map_or(0.0, |l| l.min);
        let mut headroom = (base.slack_output - slack_min).max(0.0);
        let mut cuts: BTreeMap<DeviceId, f64> = BTreeMap::new();
        for dr in self.responsive_dr.iter().filter(|d| (d.start..d.end).contains(&t)) {
            let demand = base
                .outputs
                .electricity
                .consumption
                .get(&dr.device)
                .copied()
                .unwrap_or(0.0);
            let already = cuts.get(&dr.device).copied().unwrap_or(0.0);
            let mw = dr.reduction.min(demand - already).min(headroom);
            if mw > 0.0 {
                *cuts.entry(dr.device.clone()).or_insert(0.0) += mw;
                headroom -= mw;
            }
        }
        cuts
    }

    fn submit_and_act(&mut self, t: u64) {
        for contract in self.submissions.remove(&t).unwrap_or_default() {
            let id = contract.id.clone();
            let outcome = ContractOutcome {
                id: id.clone(),
                seller: contract.seller.clone(),
                buyer: contract.buyer.clone(),
                carrier: contract.carrier,
                quantity: contract.quantity,
                submitted_at: contract.submitted_at,
                status: ContractStatus::Pending,
                block: None,
                reason: None,
            };
            match self.ledger.submit_contract(contract, &mut self.book) {
                Ok(()) => {
                    self.outcomes.insert(id.clone(), outcome);
                    self.emit(EventKind::ContractSubmitted { contract: id });
                }
                Err(err) => {
                    let reason = match err {
                        LedgerError::Refused(r) => r,
                        other => RejectReason::Invalid {
                            message: other.to_string(),
                        },
                    };
                    self.outcomes.insert(
                        id.clone(),
                        ContractOutcome {
                            status: ContractStatus::Rejected,
                            reason: Some(reason.clone()),
                            ..outcome
                        },
                    );
                    self.emit(EventKind::ContractRefused { contract: id, reason });
                }
            }
        }

        for action in self.actions.remove(&t).unwrap_or_default() {
            let actor = action.actor.clone();
            let result = match (action.buy_right, action.exchange) {
                (Some(right), _) => {
                    let price = self.config.tokens.right_prices[&right];
                    self.book
                        .buy_right(&actor, right, price, t)
                        .map(|()| EventKind::RightPurchased {
                            actor: actor.clone(),
                            right,
                            price,
                        })
                }
                (None, Some(tokens)) => self
                    .book
                    .exchange_fiat(&actor, tokens, self.config.tokens.fiat_rate, t)
                    .map(|fiat| {
                        *self.fiat.entry(actor.clone()).or_insert(0.0) += fiat;
                        EventKind::FiatExchanged {
                            actor: actor.clone(),
                            tokens,
                            fiat,
                        }
                    }),
                (None, None) => unreachable!("actions are validated"),
            };
            let kind = result.unwrap_or_else(|e| EventKind::ActionFailed {
                actor,
                message: e.to_string(),
            });
            self.emit(kind);
        }
    }

    fn form_and_execute(&mut self, t: u64) -> usize {
        let mut count = 0;
        while let Some(block) = self.ledger.form_block(t) {
            count += 1;
            self.block_formed(&block);
            let mut validator = GridValidator {
                network: &self.network,
                schedule: &mut self.schedule,
            };
            let executions = self
                .ledger
                .execute_block(&block, &mut validator, &mut self.book, t);
            self.record_executions(&block, executions, t);
        }
        count
    }

    fn block_formed(&mut self, block: &Block) {
        self.emit(EventKind::BlockFormed {
            height: block.height,
            digest: block.digest,
            contracts: block.contracts.iter().map(|c| c.id.clone()).collect(),
        });
    }

    fn record_executions(&mut self, block: &Block, executions: Vec<Execution>, t: u64) {
        let hours = self.config.schedule.step_hours;
        for ex in executions {
            let c = &ex.contract;
            let steps = (c.delivery_steps as u64).min(self.horizon().saturating_sub(t)) as f64;
            match &ex.reason {
                None => {
                    let payment = c.price * c.quantity * steps * hours;
                    *self.fiat.entry(c.buyer.clone()).or_insert(0.0) -= payment;
                    *self.fiat.entry(c.seller.clone()).or_insert(0.0) += payment;
                    self.emit(EventKind::ContractExecuted {
                        contract: c.id.clone(),
                        block: block.height,
                    });
                }
                Some(reason) => {
                    let grid_limited = matches!(
                        reason,
                        RejectReason::Congestion { .. } | RejectReason::SlackLimit { .. }
                    );
                    let renewable = self
                        .network
                        .device(&c.seller_device)
                        .is_some_and(|d| d.kind == DeviceKind::RenewableGen);
                    if grid_limited && renewable && c.carrier == Carrier::Electricity {
                        self.curtailed_mwh += c.quantity * steps * hours;
                    }
                    self.emit(EventKind::ContractCancelled {
                        contract: c.id.clone(),
                        block: block.height,
                        reason: reason.clone(),
                    });
                }
            }
            if let Some(o) = self.outcomes.get_mut(&c.id) {
                o.status = ex.status;
                o.block = Some(block.height);
                o.reason = ex.reason;
            }
        }
    }

    fn settle(&mut self, actor: &ActorId, kind: FactorKind, value: f64) -> Result<(), SimError> {
        let rule: TokenRule = match kind {
            FactorKind::Carbon => self.config.tokens.carbon,
            FactorKind::Congestion => self.config.tokens.congestion,
        };
        let requested = rule.tokens_for_factor(value)?;
        let cause = match (kind, requested < 0) {
            (FactorKind::Carbon, false) => IssuanceCause::CarbonReward,
            (FactorKind::Carbon, true) => IssuanceCause::CarbonLevy,
            (FactorKind::Congestion, _) => IssuanceCause::CongestionReward,
        };
        let issuance = self.book.settle(actor, requested, cause, self.step)?;
        let settlement = Settlement {
            actor: actor.clone(),
            step: self.step,
            kind,
            value,
            requested,
            applied: issuance.amount,
        };
        self.emit(EventKind::Settlement {
            actor: actor.clone(),
            kind,
            value,
            requested,
            applied: issuance.amount,
        });
        self.period.settlements.push(settlement);
        Ok(())
    }

    /// Supply and demand carbon factors of `actor` from the period so far.
    fn carbon_parts(&self, actor: &ActorId) -> Result<(Option<EmissionSummary>, Option<ConsumptionSummary>), SimError> {
        let cfg = self
            .config
            .actors
            .iter()
            .find(|a| &a.id == actor)
            .expect("known actor");
        let owns = |pred: fn(DeviceKind) -> bool| {
            self.network
                .devices()
                .iter()
                .any(|d| &d.owner == actor && pred(d.kind))
        };
        let inc = &self.config.incentives;
        let supply = match cfg.emission_permit {
            Some(permit) if owns(|k| k != DeviceKind::Load) => {
                let emitted = self.period.emissions.get(actor).copied().unwrap_or(0.0);
                let f = supply_factor(
                    &EmissionRecord {
                        actor: actor.clone(),
                        s_permit: permit,
                        s_actual: emitted,
                    },
                    &SupplyFactorParams { alpha: inc.alpha },
                )?;
                Some(EmissionSummary {
                    actor: actor.clone(),
                    permit,
                    emitted,
                    f_supply: f,
                })
            }
            _ => None,
        };
        let demand = if owns(|k| k == DeviceKind::Load) {
            let usage = self.period.usage.get(actor).copied().unwrap_or_default();
            let params = DemandFactorParams {
                beta: inc.beta,
                gamma: inc.gamma,
                sigma: inc.sigma,
                dr_credit: inc.dr_credit.clone(),
            };
            Some(ConsumptionSummary {
                actor: actor.clone(),
                usage,
                f_demand: demand_factor(&usage, &params)?,
            })
        } else {
            None
        };
        Ok((supply, demand))
    }

    fn carbon_factor(&self, actor: &ActorId) -> Result<Option<f64>, SimError> {
        let (s, d) = self.carbon_parts(actor)?;
        Ok(match (s, d) {
            (None, None) => None,
            (s, d) => Some(s.map_or(0.0, |s| s.f_supply) + d.map_or(0.0, |d| d.f_demand)),
        })
    }

    fn close_period(&mut self, period: u64) -> Result<(), SimError> {
        let actors: Vec<ActorId> = self.config.actors.iter().map(|a| a.id.clone()).collect();
        let mut emissions = Vec::new();
        let mut consumption = Vec::new();
        for actor in &actors {
            let (s, d) = self.carbon_parts(actor)?;
            let f = match (&s, &d) {
                (None, None) => None,
                _ => Some(s.as_ref().map_or(0.0, |s| s.f_supply) + d.as_ref().map_or(0.0, |d| d.f_demand)),
            };
            emissions.extend(s);
            consumption.extend(d);
            let Some(f) = f else { continue };
            self.emit(EventKind::Factor {
                actor: actor.clone(),
                kind: FactorKind::Carbon,
                value: f,
            });
            let acc = self.accumulators.get_mut(actor).expect("actor accumulator");
            let value = match acc.carbon.accumulate(f) {
                Some(trigger) => trigger.value,
                None => acc.carbon.drain(),
            };
            self.settle(actor, FactorKind::Carbon, value)?;
        }
        for actor in &actors {
            let acc = self.accumulators.get_mut(actor).expect("actor accumulator");
            let residual = acc.congestion.drain();
            if residual != 0.0 {
                self.settle(actor, FactorKind::Congestion, residual)?;
            }
        }
        self.book.close_period();
        let stats = std::mem::take(&mut self.period);
        self.periods.push(PeriodSummary {
            period,
            emissions,
            consumption,
            settlements: stats.settlements,
        });
        self.emit(EventKind::PeriodClosed { period });
        // Keep period-to-date values of the closing step for the time series.
        self.period.emissions = stats.emissions;
        self.period.usage = stats.usage;
        self.period.congestion = stats.congestion;
        Ok(())
    }

    fn record_timeseries(
        &mut self,
        t: u64,
        clean: &BTreeMap<ActorId, (f64, f64)>,
        period_closed: bool,
    ) -> Result<(), SimError> {
        let mut rows = Vec::with_capacity(self.config.actors.len());
        for a in &self.config.actors {
            let f_carbon = self.carbon_factor(&a.id)?.unwrap_or(0.0);
            let f_congestion = self.period.congestion.get(&a.id).copied().unwrap_or(0.0);
            let owns_load = self
                .network
                .devices()
                .iter()
                .any(|d| d.owner == a.id && d.kind == DeviceKind::Load);
            let clean_fraction = owns_load.then(|| match clean.get(&a.id) {
                Some(&(c, total)) if total > 0.0 => (c / total).clamp(0.0, 1.0),
                _ => 0.0,
            });
            rows.push(TimeseriesRow {
                step: t,
                actor: a.id.clone(),
                balance: self.book.account(&a.id).map_or(0, |acc| acc.balance),
                f_carbon,
                f_congestion,
                clean_fraction,
            });
        }
        self.timeseries.extend(rows);
        if period_closed {
            self.period = PeriodStats::default();
        }
        Ok(())
    }

    /// Runs the remaining steps.
    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Packs and cancels whatever is still pending and builds the report.
    pub fn finish(self) -> Report {
        self.finish_with_chain().0
    }

    /// Like [`Simulation::finish`], also returning the ordering node's chain.
    pub fn finish_with_chain(mut self) -> (Report, Chain) {
        if !self.finished {
            self.finished = true;
            if let Some(block) = self.ledger.flush(self.step) {
                self.block_formed(&block);
                let executions =
                    self.ledger
                        .cancel_block(&block, RejectReason::HorizonEnded, &mut self.book);
                let t = self.step;
                self.record_executions(&block, executions, t);
            }
        }

        let actors = self
            .book
            .accounts()
            .map(|a| ActorSummary {
                actor: a.actor.clone(),
                initial_balance: self.book.initial_balance(&a.actor).unwrap_or(0),
                final_balance: a.balance,
                fiat: self.fiat.get(&a.actor).copied().unwrap_or(0.0),
                restricted: a.restricted,
                rights: a.rights.iter().copied().collect(),
            })
            .collect();
        let chain = self.ledger.chain();
        let report = Report {
            scenario: self.config.name.clone(),
            seed: self.seed,
            steps: self.horizon(),
            steps_per_period: self.config.schedule.steps_per_period,
            actors,
            timeseries: self.timeseries,
            periods: self.periods,
            congestion_events: self.congestion_events,
            curtailed_mwh: self.curtailed_mwh,
            unserved_heat_mwh: self.unserved_heat_mwh,
            contracts: self.outcomes.into_values().collect(),
            issuances: self.book.audit().to_vec(),
            fee_pool: self.book.fee_pool(),
            chain: ChainSummary {
                height: chain.tip().height,
                tip: chain.tip().digest,
                verified: verify_chain(chain).is_ok(),
                nodes: self.ledger.nodes().len(),
                nodes_consistent: self.ledger.nodes_consistent(),
            },
            events: self.events,
        };
        (report, self.ledger.chain().clone())
    }
}

/// Runs a validated scenario to completion. `seed` overrides the scenario's
/// seed.
pub fn run(config: &ScenarioConfig, seed: Option<u64>) -> Result<Report, SimError> {
    let mut sim = Simulation::new(config, seed)?;
    sim.run_to_end()?;
    Ok(sim.finish())
}

/// Runs a scenario and returns the report together with the final chain.
pub fn run_with_chain(config: &ScenarioConfig, seed: Option<u64>) -> Result<(Report, Chain), SimError> {
    let mut sim = Simulation::new(config, seed)?;
    sim.run_to_end()?;
    Ok(sim.finish_with_chain())
}
