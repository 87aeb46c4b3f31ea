use std::collections::BTreeMap;

use super::{Carrier, GridError, Limit, Network};
use crate::BusId;

/// Heat-led CHP operating point: returns `(electric MW, heat MW)`.
///
/// Heat follows demand up to the unit's heat maximum; electric output is tied
/// to heat through the heat-power ratio and then clamped to electric limits.
pub fn chp_outputs(
    heat_demand: f64,
    ratio: f64,
    limits: &BTreeMap<Carrier, Limit>,
) -> Result<(f64, f64), GridError> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(GridError::InvalidRatio(ratio));
    }
    if heat_demand.is_nan() || heat_demand < 0.0 {
        return Err(GridError::NegativeDemand(heat_demand));
    }
    let heat_max = limits
        .get(&Carrier::Heat)
        .map_or(f64::INFINITY, |l| l.max);
    let heat = heat_demand.min(heat_max);
    let electric = match limits.get(&Carrier::Electricity) {
        Some(l) => l.clamp(heat / ratio),
        None => heat / ratio,
    };
    Ok((electric, heat))
}

/// Per-bus heat position: `demand - supply`. Positive values are deficits,
/// negative values surpluses. No transport losses.
pub fn heat_balance(
    supplies: &BTreeMap<BusId, f64>,
    demands: &BTreeMap<BusId, f64>,
) -> BTreeMap<BusId, f64> {
    let mut out: BTreeMap<BusId, f64> = BTreeMap::new();
    for (bus, d) in demands {
        *out.entry(bus.clone()).or_insert(0.0) += d;
    }
    for (bus, s) in supplies {
        *out.entry(bus.clone()).or_insert(0.0) -= s;
    }
    out
}

/// Sums a per-bus heat balance over heat zones.
pub fn zone_balance(network: &Network, per_bus: &BTreeMap<BusId, f64>) -> Vec<f64> {
    let mut zones = vec![0.0; network.heat_zone_count()];
    for (bus, v) in per_bus {
        if let Some(z) = network.heat_zone(bus) {
            zones[z] += v;
        }
    }
    zones
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits(heat_max: Option<f64>) -> BTreeMap<Carrier, Limit> {
        let mut l = BTreeMap::new();
        if let Some(h) = heat_max {
            l.insert(Carrier::Heat, Limit::new(0.0, h));
        }
        l
    }

    #[test]
    fn chp_zero_demand() {
        assert_eq!(chp_outputs(0.0, 2.0, &limits(None)).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn chp_unconstrained_and_clamped() {
        assert_eq!(chp_outputs(10.0, 2.0, &limits(None)).unwrap(), (5.0, 10.0));
        assert_eq!(chp_outputs(100.0, 2.0, &limits(Some(40.0))).unwrap(), (20.0, 40.0));
    }

    #[test]
    fn chp_electric_limit_binds() {
        let mut l = limits(None);
        l.insert(Carrier::Electricity, Limit::new(0.0, 3.0));
        assert_eq!(chp_outputs(10.0, 2.0, &l).unwrap(), (3.0, 10.0));
    }

    #[test]
    fn chp_rejects_bad_ratio() {
        assert_eq!(
            chp_outputs(1.0, 0.0, &limits(None)),
            Err(GridError::InvalidRatio(0.0))
        );
        assert!(chp_outputs(-1.0, 1.0, &limits(None)).is_err());
    }

    #[test]
    fn balance_cases() {
        let m = |v: &[(&str, f64)]| -> BTreeMap<BusId, f64> {
            v.iter().map(|(b, x)| (BusId::from(*b), *x)).collect()
        };
        assert_eq!(heat_balance(&m(&[("A", 10.0)]), &m(&[("A", 10.0)]))[&"A".into()], 0.0);
        assert_eq!(heat_balance(&m(&[]), &m(&[("A", 5.0)]))[&"A".into()], 5.0);
        let out = heat_balance(&m(&[("A", 3.0), ("B", 4.0)]), &m(&[("A", 5.0)]));
        assert_eq!(out, m(&[("A", 2.0), ("B", -4.0)]));
    }
}
