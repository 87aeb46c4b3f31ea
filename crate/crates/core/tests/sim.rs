mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::{json, Value};
use tokengrid::ledger::{verify_chain, ContractStatus, RejectReason};
use tokengrid::report::{EventKind, FactorKind, Report};
use tokengrid::scenario::{load_scenario, ScenarioConfig};
use tokengrid::sim::{run, run_with_chain, Simulation};
use tokengrid::tokens::IssuanceCause;
use tokengrid::ActorId;

use common::{demo_text, floor_coef_expm1, table_oracle};

fn demo() -> ScenarioConfig {
    load_scenario(&demo_text()).unwrap()
}

fn demo_with(edit: impl FnOnce(&mut Value)) -> ScenarioConfig {
    let mut v: Value = serde_json::from_str(&demo_text()).unwrap();
    edit(&mut v);
    load_scenario(&v.to_string()).unwrap()
}

/// Every audited balance change has a matching event at the same step.
fn check_causes(report: &Report) {
    let payer: BTreeMap<_, _> = demo()
        .contracts
        .iter()
        .map(|c| (c.id.clone(), c.payer.clone().unwrap_or(c.seller.clone())))
        .collect();
    for iss in &report.issuances {
        let mut at_step = report.events.iter().filter(|e| e.step == iss.step);
        let found = at_step.any(|e| match (&e.kind, iss.cause) {
            (
                EventKind::Settlement { actor, kind, applied, .. },
                IssuanceCause::CarbonReward | IssuanceCause::CarbonLevy,
            ) => actor == &iss.actor && *kind == FactorKind::Carbon && *applied == iss.amount,
            (EventKind::Settlement { actor, kind, applied, .. }, IssuanceCause::CongestionReward) => {
                actor == &iss.actor && *kind == FactorKind::Congestion && *applied == iss.amount
            }
            (EventKind::ContractExecuted { contract, .. }, IssuanceCause::FeePayment) => {
                payer.get(contract) == Some(&iss.actor)
            }
            (EventKind::FiatExchanged { actor, tokens, .. }, IssuanceCause::FiatExchange) => {
                actor == &iss.actor && -(*tokens as i64) == iss.amount
            }
            (EventKind::RightPurchased { actor, price, .. }, IssuanceCause::RightPurchase) => {
                actor == &iss.actor && -(*price as i64) == iss.amount
            }
            _ => false,
        });
        assert!(found, "no event explains {iss:?}");
    }
}

#[test]
fn demo_runs_and_verifies() {
    let (report, chain) = run_with_chain(&demo(), None).unwrap();
    assert_eq!(report.steps, 90);
    assert!(report.chain.verified && report.chain.nodes_consistent);
    verify_chain(&chain).unwrap();
    assert_eq!(report.chain.tip, chain.tip().digest);
    assert!(!report.congestion_events.is_empty());
    assert!(report.curtailed_mwh > 0.0);
    check_causes(&report);
}

#[test]
fn accounting_identity_per_actor() {
    for seed in [1, 42, 9000] {
        let report = run(&demo(), Some(seed)).unwrap();
        for a in &report.actors {
            let sum: i64 = report
                .issuances
                .iter()
                .filter(|i| i.actor == a.actor)
                .map(|i| i.amount)
                .sum();
            assert_eq!(a.final_balance, a.initial_balance + sum, "{}", a.actor);
        }
        check_causes(&report);
    }
}

#[test]
fn energy_balances_every_step() {
    let mut sim = Simulation::new(&demo(), None).unwrap();
    while !sim.is_done() {
        let s = sim.step().unwrap();
        assert!((s.generation - s.load).abs() <= 1e-9, "step {}: {s:?}", s.step);
    }
}

#[test]
fn responding_load_gains_the_table_value() {
    let config = demo();
    let table: Vec<(f64, f64)> = config.incentives.congestion_table.breakpoints().to_vec();
    let city = ActorId::new("city_co");
    let mut sim = Simulation::new(&config, None).unwrap();
    let mut checked = 0;
    while !sim.is_done() {
        let before = sim.accumulator(&city).unwrap().congestion.value;
        let seen = sim.events().len();
        let s = sim.step().unwrap();
        let new = &sim.events()[seen..];
        let relieved: f64 = new
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::DemandResponse { actor, mw, .. } if actor == &city => Some(*mw),
                _ => None,
            })
            .sum();
        let settled = new.iter().any(|e| {
            matches!(&e.kind, EventKind::Settlement { actor, kind: FactorKind::Congestion, .. } if actor == &city)
        });
        if !s.congested || relieved == 0.0 || settled {
            continue;
        }
        let want = table_oracle(&table, relieved);
        let factor = new.iter().find_map(|e| match &e.kind {
            EventKind::Factor { actor, kind: FactorKind::Congestion, value } if actor == &city => Some(*value),
            _ => None,
        });
        assert_eq!(factor, Some(want), "step {}", s.step);
        let after = sim.accumulator(&city).unwrap().congestion.value;
        assert_eq!(after, before + want, "step {}", s.step);
        checked += 1;
    }
    assert!(checked > 0, "no congested step with a responding load");
}

#[test]
fn clean_generator_earns_the_full_supply_factor() {
    let config = demo();
    let report = run(&config, None).unwrap();
    let alpha = config.incentives.alpha;
    let rule = config.tokens.carbon;
    // The wind owner has no loads, so its carbon factor is the supply part.
    let want = floor_coef_expm1(rule.xi, alpha).min(rule.n_max as i128) as i64;
    for p in &report.periods {
        let e = p.emissions.iter().find(|e| e.actor.as_str() == "wind_co").unwrap();
        assert_eq!(e.emitted, 0.0);
        assert_eq!(e.f_supply, alpha);
        let s = p
            .settlements
            .iter()
            .find(|s| s.actor.as_str() == "wind_co" && s.kind == FactorKind::Carbon)
            .unwrap();
        assert_eq!(s.value, alpha);
        assert_eq!(s.requested, want);
    }
}

#[test]
fn trivial_scenario_is_quiet() {
    let config = demo_with(|v| {
        v["schedule"]["steps_per_period"] = json!(1);
        v["schedule"]["periods"] = json!(1);
        v["schedule"]["profiles"] = json!([]);
        v["schedule"]["demand_response"] = json!([]);
        v["contracts"] = json!([]);
        v["actions"] = json!([]);
    });
    let (report, chain) = run_with_chain(&config, None).unwrap();
    assert_eq!(chain.len(), 1);
    assert_eq!(report.chain.height, 0);
    assert!(report.congestion_events.is_empty());
    assert!(report.contracts.is_empty());
    assert_eq!(report.curtailed_mwh, 0.0);
}

#[test]
fn restricted_actor_is_refused() {
    let report = run(&demo(), None).unwrap();
    let coal: Vec<_> = report
        .contracts
        .iter()
        .filter(|c| c.seller.as_str() == "coal_co" && c.submitted_at >= 30)
        .collect();
    assert!(!coal.is_empty());
    for c in coal {
        assert_eq!(c.status, ContractStatus::Rejected, "{}", c.id);
        assert!(matches!(
            &c.reason,
            Some(RejectReason::Restricted { actor }) if actor.as_str() == "coal_co"
        ));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn seeded_runs_are_identical(seed in any::<u64>()) {
        let config = demo();
        let (a, ca) = run_with_chain(&config, Some(seed)).unwrap();
        let (b, cb) = run_with_chain(&config, Some(seed)).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert_eq!(ca.to_json_lines(), cb.to_json_lines());
        prop_assert_eq!(a.seed, seed);
        let supply: i64 = a.actors.iter().map(|x| x.final_balance).sum::<i64>() + a.fee_pool as i64;
        let initial: i64 = a.actors.iter().map(|x| x.initial_balance).sum();
        let net: i64 = a.issuances.iter().filter(|i| i.cause != IssuanceCause::FeePayment).map(|i| i.amount).sum();
        prop_assert_eq!(supply, initial + net);
    }
}
