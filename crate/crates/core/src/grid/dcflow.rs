use nalgebra::{DMatrix, DVector};

use super::{Carrier, CongestionReport, FlowSolution, GridError, Injections, Network, Overload};

/// Angles beyond this many radians only come out of a numerically singular
/// system.
const ANGLE_SANITY_LIMIT: f64 = 1e6;

/// Solves the lossless DC power flow `P = B·θ` with the slack angle fixed at 0.
///
/// The slack bus absorbs whatever electric residual the injections leave, so
/// callers may pass an unbalanced set and read the adjustment back from
/// [`FlowSolution::slack_adjustment`].
pub fn solve_dc_flow(network: &Network, inj: &Injections) -> Result<FlowSolution, GridError> {
    let n = network.buses().len();
    let mut p = vec![0.0; n];
    for ((bus, carrier), mw) in &inj.values {
        if *carrier != Carrier::Electricity {
            continue;
        }
        let i = network.bus_position(bus).ok_or_else(|| {
            GridError::InvalidParameter(format!("injection at unknown bus `{bus}`"))
        })?;
        if !mw.is_finite() {
            return Err(GridError::InvalidParameter(format!(
                "non-finite injection at bus `{bus}`"
            )));
        }
        p[i] += mw;
    }

    let slack = network.slack_position();
    let residual: f64 = p.iter().sum();
    p[slack] -= residual;

    // Reduced system over electric buses other than the slack.
    let mut reduced = vec![usize::MAX; n];
    let mut order = Vec::new();
    for (i, bus) in network.buses().iter().enumerate() {
        if i != slack && bus.carriers.contains(&Carrier::Electricity) {
            reduced[i] = order.len();
            order.push(i);
        }
    }

    let m = order.len();
    let mut b = DMatrix::<f64>::zeros(m, m);
    for (line, f, t) in network.electric_lines() {
        let y = line.susceptance;
        let (rf, rt) = (reduced[f], reduced[t]);
        if rf != usize::MAX {
            b[(rf, rf)] += y;
        }
        if rt != usize::MAX {
            b[(rt, rt)] += y;
        }
        if rf != usize::MAX && rt != usize::MAX {
            b[(rf, rt)] -= y;
            b[(rt, rf)] -= y;
        }
    }

    let base = network.base_mva();
    let rhs = DVector::from_iterator(m, order.iter().map(|&i| p[i] / base));
    let theta_reduced = if m == 0 {
        DVector::zeros(0)
    } else {
        b.lu().solve(&rhs).ok_or(GridError::SingularMatrix)?
    };
    if theta_reduced
        .iter()
        .any(|t| !t.is_finite() || t.abs() > ANGLE_SANITY_LIMIT)
    {
        return Err(GridError::SingularMatrix);
    }

    let mut angles = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        angles[i] = theta_reduced[k];
    }

    let flows = network
        .electric_lines()
        .map(|(line, f, t)| {
            (
                line.id.clone(),
                base * line.susceptance * (angles[f] - angles[t]),
            )
        })
        .collect();

    Ok(FlowSolution {
        step: inj.step,
        flows,
        angles,
        injections: p,
        slack_adjustment: -residual,
    })
}

/// Lists every electric line whose absolute flow strictly exceeds capacity.
pub fn detect_congestion(flow: &FlowSolution, network: &Network) -> CongestionReport {
    let entries = network
        .electric_lines()
        .zip(&flow.flows)
        .filter_map(|((line, _, _), (id, f))| {
            debug_assert_eq!(&line.id, id);
            (f.abs() > line.capacity).then(|| Overload {
                line: id.clone(),
                flow: *f,
                capacity: line.capacity,
                overload: f.abs() - line.capacity,
            })
        })
        .collect();
    CongestionReport {
        step: flow.step,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::grid::{build_network, Bus, Device, DeviceKind, Limit, Line, TopologyConfig};
    use crate::{ActorId, LineId};

    fn net(buses: &[&str], lines: &[(&str, &str, &str, f64)]) -> Network {
        build_network(&TopologyConfig {
            base_mva: 100.0,
            slack_bus: Some(buses[0].into()),
            buses: buses
                .iter()
                .map(|b| Bus {
                    id: (*b).into(),
                    carriers: vec![Carrier::Electricity],
                })
                .collect(),
            lines: lines
                .iter()
                .map(|(id, f, t, cap)| Line {
                    id: (*id).into(),
                    carrier: Carrier::Electricity,
                    from: (*f).into(),
                    to: (*t).into(),
                    susceptance: 10.0,
                    capacity: *cap,
                })
                .collect(),
            devices: vec![Device {
                id: "G".into(),
                bus: buses[0].into(),
                kind: DeviceKind::ThermalGen,
                owner: ActorId::new("gen"),
                emission_rate: 1.0,
                heat_power_ratio: None,
                limits: BTreeMap::from([(Carrier::Electricity, Limit::new(0.0, 100.0))]),
            }],
        })
        .unwrap()
    }

    fn inject(pairs: &[(&str, f64)]) -> Injections {
        let mut inj = Injections::new(0);
        for (bus, mw) in pairs {
            inj.add(&(*bus).into(), Carrier::Electricity, *mw);
        }
        inj
    }

    #[test]
    fn single_path_carries_full_transfer() {
        let n = net(&["A", "B"], &[("L", "A", "B", 10.0)]);
        let sol = solve_dc_flow(&n, &inject(&[("A", 1.0), ("B", -1.0)])).unwrap();
        assert!((sol.flow(&LineId::new("L")).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sol.angles[0], 0.0);
    }

    #[test]
    fn zero_injections_zero_flows() {
        let n = net(&["A", "B", "C"], &[("AB", "A", "B", 1.0), ("BC", "B", "C", 1.0)]);
        let sol = solve_dc_flow(&n, &Injections::new(3)).unwrap();
        assert!(sol.flows.iter().all(|(_, f)| *f == 0.0));
        assert_eq!(sol.step, 3);
    }

    #[test]
    fn triangle_splits_two_thirds_one_third() {
        // Reduced B over (B, C) with unit susceptances 10: [[20,-10],[-10,20]].
        // θ = B⁻¹·[-0.01, 0] gives flows 2/3, 1/3, 1/3 (hand solve).
        let n = net(
            &["A", "B", "C"],
            &[("AB", "A", "B", 5.0), ("AC", "A", "C", 5.0), ("CB", "C", "B", 5.0)],
        );
        let sol = solve_dc_flow(&n, &inject(&[("A", 1.0), ("B", -1.0)])).unwrap();
        let f = |id: &str| sol.flow(&LineId::new(id)).unwrap();
        assert!((f("AB") - 2.0 / 3.0).abs() < 1e-12);
        assert!((f("AC") - 1.0 / 3.0).abs() < 1e-12);
        assert!((f("CB") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn slack_absorbs_residual() {
        let n = net(&["A", "B"], &[("L", "A", "B", 10.0)]);
        let sol = solve_dc_flow(&n, &inject(&[("B", -4.0)])).unwrap();
        assert!((sol.slack_adjustment - 4.0).abs() < 1e-12);
        assert!((sol.flow(&LineId::new("L")).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn congestion_is_strict() {
        let n = net(&["A", "B"], &[("L", "A", "B", 1.0)]);
        for (mw, expected) in [(0.9, None), (1.0, None), (1.2, Some(0.2))] {
            let sol = FlowSolution {
                step: 0,
                flows: vec![(LineId::new("L"), mw)],
                angles: vec![0.0, 0.0],
                injections: vec![mw, -mw],
                slack_adjustment: 0.0,
            };
            let report = detect_congestion(&sol, &n);
            match expected {
                None => assert!(!report.is_congested(), "{mw}"),
                Some(over) => {
                    assert_eq!(report.entries.len(), 1);
                    assert!((report.entries[0].overload - over).abs() < 1e-12);
                }
            }
        }
    }
}
