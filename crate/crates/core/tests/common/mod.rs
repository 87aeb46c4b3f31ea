//! Shared fixtures and independent oracles for integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tokengrid::grid::{
    build_network, solve_dc_flow, Bus, Carrier, Device, DeviceKind, FlowSolution, Injections,
    Limit, Line, Network, TopologyConfig,
};
use tokengrid::trace::{CarrierOutputs, DeviceOutputs};
use tokengrid::DeviceId;

pub fn demo_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/demo.json")
}

pub fn demo_text() -> String {
    std::fs::read_to_string(demo_path()).expect("demo scenario present")
}

// ---------------------------------------------------------------------------
// Exact arithmetic

pub fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Bits of fixed-point precision used by [`expm1_fixed`].
const PRECISION: u32 = 320;

/// `x * 2^PRECISION` as an integer, exact for any f64 above 2^-PRECISION.
fn to_fixed(x: f64) -> BigInt {
    let r = rational(x) * BigRational::from_integer(BigInt::one() << PRECISION);
    r.to_integer()
}

/// `(e^x − 1) * 2^PRECISION` by Taylor series in fixed point. Each term is
/// truncated, so the result is within a few hundred units of the last place.
pub fn expm1_fixed(x: f64) -> BigInt {
    let one = BigInt::one() << PRECISION;
    let fx = to_fixed(x);
    let mut term = fx.clone();
    let mut sum = fx.clone();
    let mut k = 2u32;
    while !term.is_zero() {
        term = (&term * &fx) / &one / BigInt::from(k);
        sum += &term;
        k += 1;
    }
    sum
}

/// `floor(coef * (e^x − 1))` evaluated with 320-bit fixed point.
pub fn floor_coef_expm1(coef: f64, x: f64) -> i128 {
    let scaled = rational(coef) * BigRational::new(expm1_fixed(x), BigInt::one() << PRECISION);
    let (num, den) = (scaled.numer().clone(), scaled.denom().clone());
    num.div_floor(&den).to_i128().expect("fits")
}

/// Independent piecewise token rule.
pub fn tokens_oracle(f: f64, theta: f64, xi: f64, f1: f64, f2: f64, n_max: u64) -> i128 {
    if f < 0.0 {
        floor_coef_expm1(-theta, -f)
    } else if f < f1 {
        0
    } else if f < f2 {
        floor_coef_expm1(xi, f)
    } else {
        n_max as i128
    }
}

pub fn supply_oracle(alpha: f64, permit: f64, actual: f64) -> f64 {
    let r = rational(alpha) * (rational(permit) - rational(actual)) / rational(permit);
    r.to_f64().unwrap()
}

/// Linear-scan step lookup.
pub fn table_oracle(breakpoints: &[(f64, f64)], x: f64) -> f64 {
    let mut value = 0.0;
    for &(threshold, v) in breakpoints {
        if x >= threshold {
            value = v;
        }
    }
    value
}

#[allow(clippy::too_many_arguments)]
pub fn demand_oracle(
    beta: f64,
    gamma: f64,
    sigma: f64,
    table: &[(f64, f64)],
    clean_e: f64,
    total_e: f64,
    clean_h: f64,
    total_h: f64,
    dr: f64,
) -> f64 {
    let ratio = |c: f64, t: f64| {
        if t == 0.0 {
            BigRational::zero()
        } else {
            rational(c) / rational(t)
        }
    };
    let r = rational(beta) * ratio(clean_e, total_e)
        + rational(gamma) * ratio(clean_h, total_h)
        + rational(sigma) * rational(table_oracle(table, dr));
    r.to_f64().unwrap()
}

pub fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * b.abs().max(a.abs())
}

pub fn is_negative(x: &BigRational) -> bool {
    x.is_negative()
}

// ---------------------------------------------------------------------------
// Random network corpus

/// A generated network with device outputs that balance exactly.
pub struct Case {
    pub network: Network,
    pub radial: bool,
    /// Parent of every bus in the spanning tree (bus 0 is the root/slack).
    pub parent: Vec<Option<usize>>,
    pub outputs: DeviceOutputs,
    pub injections: Injections,
    pub flow: FlowSolution,
    pub all_clean: bool,
}

pub fn bus_name(i: usize) -> String {
    format!("N{i}")
}

/// Builds a random connected network of 2–10 buses. Radial when `radial`,
/// otherwise a spanning tree plus extra chords.
pub fn random_case(seed: u64, radial: bool, all_clean: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10usize);
    let mut parent = vec![None; n];
    let mut lines = Vec::new();
    let mut edges = std::collections::BTreeSet::new();
    for (i, p) in parent.iter_mut().enumerate().skip(1) {
        let q = rng.random_range(0..i);
        *p = Some(q);
        edges.insert((q, i));
        // Orientation is random so both signs of the convention are exercised.
        let (from, to) = if rng.random_bool(0.5) { (q, i) } else { (i, q) };
        lines.push(Line {
            id: format!("T{i}").into(),
            carrier: Carrier::Electricity,
            from: bus_name(from).into(),
            to: bus_name(to).into(),
            susceptance: rng.random_range(1.0..20.0),
            capacity: 1e6,
        });
    }
    if !radial && n >= 3 {
        let extra = rng.random_range(1..=n);
        for k in 0..extra {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let (a, b) = (a.min(b), a.max(b));
            if a == b || !edges.insert((a, b)) {
                continue;
            }
            lines.push(Line {
                id: format!("M{k}").into(),
                carrier: Carrier::Electricity,
                from: bus_name(a).into(),
                to: bus_name(b).into(),
                susceptance: rng.random_range(1.0..20.0),
                capacity: 1e6,
            });
        }
    }

    let limits = |max: f64| BTreeMap::from([(Carrier::Electricity, Limit::new(0.0, max))]);
    let mut devices = vec![Device {
        id: "SLACK".into(),
        bus: bus_name(0).into(),
        kind: DeviceKind::ThermalGen,
        owner: "a".into(),
        emission_rate: if all_clean { 0.0 } else { 0.9 },
        heat_power_ratio: None,
        limits: limits(1e6),
    }];
    let mut loads = BTreeMap::new();
    let mut gens = BTreeMap::new();
    for i in 0..n {
        if rng.random_bool(0.6) {
            let id = format!("L{i}");
            loads.insert(DeviceId::new(id.as_str()), rng.random_range(0.0..50.0));
            devices.push(Device {
                id: id.as_str().into(),
                bus: bus_name(i).into(),
                kind: DeviceKind::Load,
                owner: "a".into(),
                emission_rate: 0.0,
                heat_power_ratio: None,
                limits: limits(1e6),
            });
        }
        if rng.random_bool(0.4) {
            let id = format!("G{i}");
            let clean = all_clean || rng.random_bool(0.5);
            gens.insert(DeviceId::new(id.as_str()), rng.random_range(0.0..30.0));
            devices.push(Device {
                id: id.as_str().into(),
                bus: bus_name(i).into(),
                kind: if clean {
                    DeviceKind::RenewableGen
                } else {
                    DeviceKind::ThermalGen
                },
                owner: "a".into(),
                emission_rate: if clean { 0.0 } else { 0.5 },
                heat_power_ratio: None,
                limits: limits(1e6),
            });
        }
    }
    // Keep the slack non-negative.
    let total_load: f64 = loads.values().sum();
    let total_gen: f64 = gens.values().sum();
    if total_gen > total_load {
        let scale = total_load / total_gen;
        for g in gens.values_mut() {
            *g *= scale;
        }
    }
    let slack = (total_load - gens.values().sum::<f64>()).max(0.0);
    gens.insert("SLACK".into(), slack);

    let cfg = TopologyConfig {
        base_mva: 100.0,
        slack_bus: Some(bus_name(0).into()),
        buses: (0..n)
            .map(|i| Bus {
                id: bus_name(i).into(),
                carriers: vec![Carrier::Electricity],
            })
            .collect(),
        lines,
        devices,
    };
    let network = build_network(&cfg).expect("generated network is valid");
    let mut injections = Injections::new(0);
    for (id, mw) in &gens {
        let d = network.device(id).unwrap();
        injections.add(&d.bus, Carrier::Electricity, *mw);
    }
    for (id, mw) in &loads {
        let d = network.device(id).unwrap();
        injections.add(&d.bus, Carrier::Electricity, -*mw);
    }
    let flow = solve_dc_flow(&network, &injections).expect("connected network solves");
    let outputs = DeviceOutputs {
        step: 0,
        electricity: CarrierOutputs {
            generation: gens,
            consumption: loads,
        },
        heat: CarrierOutputs::default(),
    };
    Case {
        network,
        radial,
        parent,
        outputs,
        injections,
        flow,
        all_clean,
    }
}

/// Net electric injection at every bus, by bus index.
pub fn net_injection(case: &Case) -> Vec<f64> {
    case.network
        .buses()
        .iter()
        .map(|b| case.injections.get(&b.id, Carrier::Electricity))
        .collect()
}

/// Outflow minus inflow at every bus from the solved line flows.
pub fn flow_divergence(case: &Case) -> Vec<f64> {
    let mut div = vec![0.0; case.network.buses().len()];
    for (line, f, t) in case.network.electric_lines() {
        let mw = case.flow.flow(&line.id).unwrap();
        div[f] += mw;
        div[t] -= mw;
    }
    div
}

/// Brute-force radial flows: the flow on the tree edge above bus `c` equals
/// the net injection of the subtree rooted at `c`, directed towards the root.
/// Sums use exact rationals.
pub fn radial_oracle(case: &Case) -> BTreeMap<String, f64> {
    let n = case.parent.len();
    let inj = net_injection(case);
    let mut out = BTreeMap::new();
    for c in 1..n {
        let mut subtree = BigRational::zero();
        for (v, x) in inj.iter().enumerate() {
            let mut u = Some(v);
            while let Some(w) = u {
                if w == c {
                    subtree += rational(*x);
                    break;
                }
                u = case.parent[w];
            }
        }
        let line = case
            .network
            .lines()
            .iter()
            .find(|l| l.id.as_str() == format!("T{c}"))
            .unwrap();
        // Subtree surplus leaves through this edge towards the parent.
        let towards_parent = line.from.as_str() == bus_name(c);
        let value = subtree.to_f64().unwrap();
        out.insert(line.id.to_string(), if towards_parent { value } else { -value });
    }
    out
}

// ---------------------------------------------------------------------------
// Ledger fixtures

use tokengrid::ledger::{Block, Chain, Contract, Digest};

pub fn contract(id: &str, fee: u64, submitted_at: u64) -> Contract {
    Contract {
        id: id.into(),
        seller: "s".into(),
        buyer: "b".into(),
        seller_device: "G".into(),
        buyer_device: "L".into(),
        payer: "s".into(),
        carrier: Carrier::Electricity,
        quantity: 1.0,
        price: 30.0,
        fee,
        submitted_at,
        delivery_steps: 1,
    }
}

/// A pool with deliberately frequent ties in fee and submission time.
pub fn random_pool(seed: u64) -> Vec<Contract> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=40usize);
    let mut ids = std::collections::BTreeSet::new();
    let mut pool = Vec::new();
    while pool.len() < n {
        let id = format!("c{:03}", rng.random_range(0..200u32));
        if !ids.insert(id.clone()) {
            continue;
        }
        let mut c = contract(&id, rng.random_range(0..5), rng.random_range(0..5));
        c.quantity = rng.random_range(0.1..20.0);
        pool.push(c);
    }
    pool
}

/// Genesis plus `blocks` blocks of three contracts each.
pub fn build_chain(blocks: u64) -> Chain {
    let mut out = vec![Block::new(0, Digest::ZERO, Vec::new(), 0)];
    for h in 1..=blocks {
        let prev = out.last().unwrap().digest;
        let contracts = (0..3)
            .map(|k| {
                let mut c = contract(&format!("b{h}-{k}"), h % 7 + k, h);
                c.quantity = 0.5 + (h * 3 + k) as f64;
                c
            })
            .collect();
        out.push(Block::new(h, prev, contracts, h * 10));
    }
    Chain::from_blocks(out)
}

/// Flips bit `bit` of the concatenated record stream and returns the block
/// height that owns it.
pub fn flip_bit(records: &mut [Vec<u8>], bit: usize) -> u64 {
    let mut byte = bit / 8;
    for (h, rec) in records.iter_mut().enumerate() {
        if byte < rec.len() {
            rec[byte] ^= 1 << (bit % 8);
            return h as u64;
        }
        byte -= rec.len();
    }
    panic!("bit {bit} out of range");
}

pub fn total_bits(records: &[Vec<u8>]) -> usize {
    records.iter().map(|r| r.len() * 8).sum()
}
