//! Carbon and congestion contribution factors, and their per-actor
//! accumulation with upper/lower settlement thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ActorId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContributionError {
    #[error("emission permit must be positive, got {0}")]
    NonPositivePermit(f64),
    #[error("actual emissions must be non-negative, got {0}")]
    NegativeEmissions(f64),
    #[error("{carrier}: clean energy {clean} exceeds total {total}")]
    CleanExceedsTotal {
        carrier: &'static str,
        clean: f64,
        total: f64,
    },
    #[error("{0} must be non-negative and finite")]
    InvalidQuantity(&'static str),
    #[error("invalid step table: {0}")]
    InvalidTable(String),
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),
}

/// Piecewise-constant lookup: the value of the greatest breakpoint whose
/// threshold is `<=` the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct StepTable {
    breakpoints: Vec<(f64, f64)>,
}

impl StepTable {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self, ContributionError> {
        match breakpoints.first() {
            None => return Err(ContributionError::InvalidTable("no breakpoints".into())),
            Some((t, _)) if *t != 0.0 => {
                return Err(ContributionError::InvalidTable(format!(
                    "first threshold must be 0, got {t}"
                )))
            }
            _ => {}
        }
        if breakpoints
            .iter()
            .any(|(t, v)| !t.is_finite() || !v.is_finite())
        {
            return Err(ContributionError::InvalidTable("non-finite entry".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ContributionError::InvalidTable(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn lookup(&self, x: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|(t, _)| *t <= x);
        if idx == 0 {
            0.0
        } else {
            self.breakpoints[idx - 1].1
        }
    }

    /// True when values never decrease and the table starts at 0.
    pub fn is_monotone_from_zero(&self) -> bool {
        self.breakpoints[0].1 == 0.0 && self.breakpoints.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

impl TryFrom<Vec<(f64, f64)>> for StepTable {
    type Error = ContributionError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<StepTable> for Vec<(f64, f64)> {
    fn from(t: StepTable) -> Self {
        t.breakpoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyFactorParams {
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandFactorParams {
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Demand-response MW to emission-reduction credit.
    pub dr_credit: StepTable,
}

impl DemandFactorParams {
    pub fn validate(&self) -> Result<(), ContributionError> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("sigma", self.sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ContributionError::InvalidCoefficient(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !self.dr_credit.is_monotone_from_zero() {
            return Err(ContributionError::InvalidTable(
                "dr_credit must be non-decreasing with f(0) = 0".into(),
            ));
        }
        Ok(())
    }
}

/// Period emissions of one supplier, tCO2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub actor: ActorId,
    pub s_permit: f64,
    pub s_actual: f64,
}

/// `α (S_permit − S) / S_permit`: positive when under the permit, negative
/// when over it.
pub fn supply_factor(
    rec: &EmissionRecord,
    p: &SupplyFactorParams,
) -> Result<f64, ContributionError> {
    if !(rec.s_permit.is_finite() && rec.s_permit > 0.0) {
        return Err(ContributionError::NonPositivePermit(rec.s_permit));
    }
    if !(rec.s_actual.is_finite() && rec.s_actual >= 0.0) {
        return Err(ContributionError::NegativeEmissions(rec.s_actual));
    }
    // Dividing before scaling keeps S = 0 exact: α · (P / P) = α.
    Ok(p.alpha * ((rec.s_permit - rec.s_actual) / rec.s_permit))
}

/// Period consumption of one consumer. Energies in MWh, DR power in MW.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandUsage {
    pub clean_e: f64,
    pub total_e: f64,
    pub clean_h: f64,
    pub total_h: f64,
    pub dr_power: f64,
}

/// `β·clean_e/total_e + γ·clean_h/total_h + σ·f(dr_power)`; a carrier term is
/// zero when its total is zero.
pub fn demand_factor(u: &DemandUsage, p: &DemandFactorParams) -> Result<f64, ContributionError> {
    fn ratio(carrier: &'static str, clean: f64, total: f64) -> Result<f64, ContributionError> {
        if !(clean.is_finite() && clean >= 0.0) || !(total.is_finite() && total >= 0.0) {
            return Err(ContributionError::InvalidQuantity(carrier));
        }
        if clean > total {
            return Err(ContributionError::CleanExceedsTotal {
                carrier,
                clean,
                total,
            });
        }
        Ok(if total == 0.0 { 0.0 } else { clean / total })
    }
    if !(u.dr_power.is_finite() && u.dr_power >= 0.0) {
        return Err(ContributionError::InvalidQuantity("dr_power"));
    }
    let electric = ratio("electricity", u.clean_e, u.total_e)?;
    let heat = ratio("heat", u.clean_h, u.total_h)?;
    Ok(p.beta * electric + p.gamma * heat + p.sigma * p.dr_credit.lookup(u.dr_power))
}

/// Stepwise congestion factor; zero unless congestion is active.
pub fn congestion_factor(relieved: f64, active_congestion: bool, table: &StepTable) -> f64 {
    if !active_congestion || relieved.is_nan() || relieved < 0.0 {
        return 0.0;
    }
    table.lookup(relieved)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub upper: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Upper,
    Lower,
}

/// A threshold crossing; carries the accumulated value it consumed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub value: f64,
}

/// Running sum of one factor with settlement thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub value: f64,
    pub thresholds: Thresholds,
}

impl Accumulator {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            value: 0.0,
            thresholds,
        }
    }

    /// Adds `delta`; on crossing a threshold the accumulated value is handed
    /// to the caller for settlement and the accumulator restarts at zero.
    pub fn accumulate(&mut self, delta: f64) -> Option<Trigger> {
        self.value += delta;
        let kind = if self.value >= self.thresholds.upper {
            TriggerKind::Upper
        } else if self.value <= self.thresholds.lower {
            TriggerKind::Lower
        } else {
            return None;
        };
        Some(Trigger {
            kind,
            value: std::mem::take(&mut self.value),
        })
    }

    /// Hands over whatever remains, e.g. at period end.
    pub fn drain(&mut self) -> f64 {
        std::mem::take(&mut self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorAccumulator {
    pub actor: ActorId,
    pub carbon: Accumulator,
    pub congestion: Accumulator,
}

impl FactorAccumulator {
    pub fn new(actor: ActorId, carbon: Thresholds, congestion: Thresholds) -> Self {
        Self {
            actor,
            carbon: Accumulator::new(carbon),
            congestion: Accumulator::new(congestion),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(permit: f64, actual: f64) -> EmissionRecord {
        EmissionRecord {
            actor: "g".into(),
            s_permit: permit,
            s_actual: actual,
        }
    }

    #[test]
    fn supply_examples() {
        let a1 = SupplyFactorParams { alpha: 1.0 };
        assert_eq!(supply_factor(&rec(100.0, 100.0), &a1).unwrap(), 0.0);
        assert_eq!(supply_factor(&rec(100.0, 0.0), &a1).unwrap(), 1.0);
        // 0.8 × (−50 / 200) = −0.2
        let f = supply_factor(&rec(200.0, 250.0), &SupplyFactorParams { alpha: 0.8 }).unwrap();
        assert!((f + 0.2).abs() < 1e-15);
        assert_eq!(
            supply_factor(&rec(0.0, 1.0), &a1),
            Err(ContributionError::NonPositivePermit(0.0))
        );
    }

    #[test]
    fn clean_supplier_gets_alpha_exactly() {
        for alpha in [0.1, 0.3, 0.7, 0.8, 1.3] {
            for permit in [3.0, 7.1, 1234.5, 1e-3] {
                let p = SupplyFactorParams { alpha };
                assert_eq!(supply_factor(&rec(permit, 0.0), &p).unwrap(), alpha);
            }
        }
    }

    fn params() -> DemandFactorParams {
        DemandFactorParams {
            beta: 0.5,
            gamma: 0.3,
            sigma: 0.2,
            dr_credit: StepTable::new(vec![(0.0, 0.0), (1.0, 0.5)]).unwrap(),
        }
    }

    #[test]
    fn demand_examples() {
        let p = params();
        assert_eq!(demand_factor(&DemandUsage::default(), &p).unwrap(), 0.0);

        let full = DemandUsage {
            clean_e: 10.0,
            total_e: 10.0,
            clean_h: 4.0,
            total_h: 4.0,
            dr_power: 0.0,
        };
        assert!((demand_factor(&full, &p).unwrap() - 0.8).abs() < 1e-15);

        // 0.5 × 0.4 + 0 (no heat) + 0.2 × 0.5 = 0.3
        let partial = DemandUsage {
            clean_e: 4.0,
            total_e: 10.0,
            clean_h: 0.0,
            total_h: 0.0,
            dr_power: 2.0,
        };
        assert!((demand_factor(&partial, &p).unwrap() - 0.3).abs() < 1e-15);

        let bad = DemandUsage {
            clean_e: 11.0,
            total_e: 10.0,
            ..DemandUsage::default()
        };
        assert!(matches!(
            demand_factor(&bad, &p),
            Err(ContributionError::CleanExceedsTotal { .. })
        ));
    }

    #[test]
    fn congestion_examples() {
        let table = StepTable::new(vec![(0.0, 0.0), (1.0, 0.1), (5.0, 0.3)]).unwrap();
        assert_eq!(congestion_factor(5.0, false, &table), 0.0);
        assert_eq!(congestion_factor(2.0, true, &table), 0.1);
        assert_eq!(congestion_factor(5.0, true, &table), 0.3);
        assert_eq!(congestion_factor(0.5, true, &table), 0.0);
    }

    #[test]
    fn table_validation() {
        assert!(StepTable::new(vec![]).is_err());
        assert!(StepTable::new(vec![(1.0, 0.0)]).is_err());
        assert!(StepTable::new(vec![(0.0, 0.0), (2.0, 1.0), (2.0, 2.0)]).is_err());
        let t: Result<StepTable, _> = serde_json::from_str("[[0, 0], [1.5, 0.2]]");
        assert_eq!(t.unwrap().lookup(1.5), 0.2);
        assert!(serde_json::from_str::<StepTable>("[[1, 0]]").is_err());
    }

    #[test]
    fn accumulator_thresholds() {
        let th = Thresholds {
            upper: 1.0,
            lower: -1.0,
        };
        let mut acc = Accumulator::new(th);
        assert_eq!(acc.accumulate(0.05), None);
        assert_eq!(acc.value, 0.05);

        let mut acc = Accumulator { value: 0.98, thresholds: th };
        let t = acc.accumulate(0.05).unwrap();
        assert_eq!(t.kind, TriggerKind::Upper);
        assert!((t.value - 1.03).abs() < 1e-15);
        assert_eq!(acc.value, 0.0);

        let mut acc = Accumulator { value: -0.9, thresholds: th };
        assert_eq!(acc.accumulate(-0.2).unwrap().kind, TriggerKind::Lower);
        assert_eq!(acc.value, 0.0);
    }
}
