//! Python bindings: scenarios, runs and reports, plus the contribution,
//! token and network primitives.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tgcore::contribution::{self, DemandFactorParams, DemandUsage, EmissionRecord, StepTable, SupplyFactorParams};
use tgcore::grid::{self, build_network, Carrier, Injections, Limit};
use tgcore::ledger::{verify_chain, Chain};
use tgcore::report::Report;
use tgcore::scenario::{load_scenario, ScenarioConfig, ScenarioError};
use tgcore::sim::run_with_chain;
use tgcore::tokens::TokenRule;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "TokenRule", module = "tokengrid", frozen)]
struct PyTokenRule {
    inner: TokenRule,
}

#[pymethods]
impl PyTokenRule {
    #[new]
    #[pyo3(signature = (theta, xi, f1, f2, n_max))]
    fn new(theta: f64, xi: f64, f1: f64, f2: f64, n_max: u64) -> PyResult<Self> {
        let inner = TokenRule { theta, xi, f1, f2, n_max };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Tokens issued (positive) or levied (negative) for factor `f`.
    fn tokens_for_factor(&self, f: f64) -> PyResult<i64> {
        self.inner.tokens_for_factor(f).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        let r = &self.inner;
        format!(
            "TokenRule(theta={}, xi={}, f1={}, f2={}, n_max={})",
            r.theta, r.xi, r.f1, r.f2, r.n_max
        )
    }
}

#[pyclass(name = "StepTable", module = "tokengrid", frozen)]
struct PyStepTable {
    inner: StepTable,
}

#[pymethods]
impl PyStepTable {
    #[new]
    fn new(breakpoints: Vec<(f64, f64)>) -> PyResult<Self> {
        StepTable::new(breakpoints)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn lookup(&self, x: f64) -> f64 {
        self.inner.lookup(x)
    }

    fn breakpoints(&self) -> Vec<(f64, f64)> {
        self.inner.breakpoints().to_vec()
    }
}

/// Supply-side carbon factor `alpha * (s_permit - s_actual) / s_permit`.
#[pyfunction]
fn supply_factor(s_permit: f64, s_actual: f64, alpha: f64) -> PyResult<f64> {
    contribution::supply_factor(
        &EmissionRecord {
            actor: "python".into(),
            s_permit,
            s_actual,
        },
        &SupplyFactorParams { alpha },
    )
    .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (clean_e, total_e, clean_h, total_h, dr_power, beta, gamma, sigma, dr_credit))]
#[allow(clippy::too_many_arguments)]
fn demand_factor(
    clean_e: f64,
    total_e: f64,
    clean_h: f64,
    total_h: f64,
    dr_power: f64,
    beta: f64,
    gamma: f64,
    sigma: f64,
    dr_credit: &PyStepTable,
) -> PyResult<f64> {
    let usage = DemandUsage {
        clean_e,
        total_e,
        clean_h,
        total_h,
        dr_power,
    };
    let params = DemandFactorParams {
        beta,
        gamma,
        sigma,
        dr_credit: dr_credit.inner.clone(),
    };
    params.validate().map_err(value_err)?;
    contribution::demand_factor(&usage, &params).map_err(value_err)
}

#[pyfunction]
fn congestion_factor(relieved: f64, active: bool, table: &PyStepTable) -> f64 {
    contribution::congestion_factor(relieved, active, &table.inner)
}

/// Heat-led CHP operating point, returned as `(electric, heat)` MW.
#[pyfunction]
#[pyo3(signature = (heat_demand, ratio, electric_max=None, heat_max=None))]
fn chp_outputs(
    heat_demand: f64,
    ratio: f64,
    electric_max: Option<f64>,
    heat_max: Option<f64>,
) -> PyResult<(f64, f64)> {
    let mut limits = BTreeMap::new();
    if let Some(max) = electric_max {
        limits.insert(Carrier::Electricity, Limit::new(0.0, max));
    }
    if let Some(max) = heat_max {
        limits.insert(Carrier::Heat, Limit::new(0.0, max));
    }
    grid::chp_outputs(heat_demand, ratio, &limits).map_err(value_err)
}

/// Validation errors of a scenario document as `path: message` strings;
/// empty when the document is valid.
#[pyfunction]
fn validate_scenario(document: &str) -> PyResult<Vec<String>> {
    match load_scenario(document) {
        Ok(_) => Ok(Vec::new()),
        Err(ScenarioError::Invalid(errors)) => Ok(errors.iter().map(|e| e.to_string()).collect()),
        Err(e) => Err(value_err(e)),
    }
}

#[pyclass(name = "Scenario", module = "tokengrid", frozen)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        load_scenario(document)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn horizon(&self) -> u64 {
        self.inner.schedule.horizon()
    }

    /// Runs the scenario; `seed` overrides the scenario's own seed.
    #[pyo3(signature = (seed=None))]
    fn run(&self, py: Python<'_>, seed: Option<u64>) -> PyResult<PyReport> {
        let (report, chain) = py
            .detach(|| run_with_chain(&self.inner, seed))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(PyReport {
            report,
            chain: Some(chain),
        })
    }

    /// DC power flow on the scenario's network for the given electric
    /// injections (MW per bus id, generation positive). Returns line flows.
    fn solve_flow(&self, injections: BTreeMap<String, f64>) -> PyResult<BTreeMap<String, f64>> {
        let network = build_network(&self.inner.topology).map_err(value_err)?;
        let mut inj = Injections::new(0);
        for (bus, mw) in &injections {
            inj.add(&bus.as_str().into(), Carrier::Electricity, *mw);
        }
        let flow = grid::solve_dc_flow(&network, &inj).map_err(value_err)?;
        Ok(flow
            .flows
            .into_iter()
            .map(|(line, f)| (line.to_string(), f))
            .collect())
    }
}

#[pyclass(name = "Report", module = "tokengrid", frozen)]
struct PyReport {
    report: Report,
    chain: Option<Chain>,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let report = Report::from_json(text).map_err(value_err)?;
        Ok(Self { report, chain: None })
    }

    fn to_json(&self) -> String {
        self.report.to_json()
    }

    fn to_csv(&self) -> String {
        self.report.to_csv()
    }

    fn summary_line(&self) -> String {
        self.report.summary_line()
    }

    /// Final token balance per actor.
    fn balances(&self) -> BTreeMap<String, i64> {
        self.report
            .actors
            .iter()
            .map(|a| (a.actor.to_string(), a.final_balance))
            .collect()
    }

    #[getter]
    fn tokens_issued(&self) -> i64 {
        self.report.tokens_issued()
    }

    #[getter]
    fn tokens_levied(&self) -> i64 {
        self.report.tokens_levied()
    }

    #[getter]
    fn curtailed_mwh(&self) -> f64 {
        self.report.curtailed_mwh
    }

    #[getter]
    fn congestion_events(&self) -> usize {
        self.report.congestion_events.len()
    }

    #[getter]
    fn chain_tip(&self) -> String {
        self.report.chain.tip.to_hex()
    }

    #[getter]
    fn blocks(&self) -> u64 {
        self.report.chain.height
    }

    /// The chain as JSON lines; `None` for reports loaded from JSON.
    fn chain_log(&self) -> Option<String> {
        self.chain.as_ref().map(Chain::to_json_lines)
    }

    fn verify_chain(&self) -> Option<bool> {
        self.chain.as_ref().map(|c| verify_chain(c).is_ok())
    }
}

#[pymodule]
#[pyo3(name = "tokengrid")]
fn tokengrid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTokenRule>()?;
    m.add_class::<PyStepTable>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(supply_factor, m)?)?;
    m.add_function(wrap_pyfunction!(demand_factor, m)?)?;
    m.add_function(wrap_pyfunction!(congestion_factor, m)?)?;
    m.add_function(wrap_pyfunction!(chp_outputs, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    Ok(())
}
