//! Python bindings. Structured results cross the boundary as plain
//! dictionaries and lists.

use nalgebra::Vector3;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pdpopa::config::{ScenarioConfig, Scheme};
use pdpopa::harness::{self, Network, SweepAxis};
use pdpopa::optimizer::{self, ApProblem, ApUser, OptimizerParams};
use pdpopa::{phy, predictor, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::ConfigInvalid(_) => PyValueError::new_err(e.to_string()),
        Error::InvalidParameter { .. } | Error::LengthMismatch { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated scenario description.
#[pyclass(name = "Scenario", module = "pdpopa_py")]
struct PyScenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Parses `toml` when given, otherwise uses the defaults.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let cfg = match toml {
            Some(t) => ScenarioConfig::from_toml(t).map_err(py_err)?,
            None => ScenarioConfig::default(),
        };
        Ok(Self { cfg })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            cfg: ScenarioConfig::load(std::path::Path::new(path)).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.cfg.to_toml()
    }

    fn hash(&self) -> String {
        self.cfg.hash()
    }

    /// Full validation including eye safety and coverage.
    fn validate(&self) -> PyResult<()> {
        harness::validate_scenario(&self.cfg).map(|_| ()).map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.cfg.seed = v;
    }

    #[getter]
    fn scheme(&self) -> &'static str {
        self.cfg.scheme.name()
    }

    #[setter]
    fn set_scheme(&mut self, v: &str) -> PyResult<()> {
        self.cfg.scheme = v.parse::<Scheme>().map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn slots_total(&self) -> usize {
        self.cfg.slots_total
    }

    #[setter]
    fn set_slots_total(&mut self, v: usize) {
        self.cfg.slots_total = v;
    }

    #[getter]
    fn warmup_slots(&self) -> usize {
        self.cfg.warmup_slots
    }

    #[setter]
    fn set_warmup_slots(&mut self, v: usize) {
        self.cfg.warmup_slots = v;
    }

    #[getter]
    fn slot_tau(&self) -> f64 {
        self.cfg.slot_tau
    }

    #[setter]
    fn set_slot_tau(&mut self, v: f64) {
        self.cfg.slot_tau = v;
    }

    #[getter]
    fn arrival_rate(&self) -> f64 {
        self.cfg.arrival_rate
    }

    #[setter]
    fn set_arrival_rate(&mut self, v: f64) {
        self.cfg.arrival_rate = v;
    }

    #[getter]
    fn ap_count(&self) -> usize {
        self.cfg.ap_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(scheme={}, seed={}, slots_total={}, hash={})",
            self.cfg.scheme.name(),
            self.cfg.seed,
            self.cfg.slots_total,
            self.cfg.hash()
        )
    }
}

/// Runs one scenario; returns the per-slot metrics, aggregate and audit.
#[pyfunction]
fn run_scenario<'py>(py: Python<'py>, scenario: &PyScenario) -> PyResult<Bound<'py, PyAny>> {
    let cfg = scenario.cfg.clone();
    let r = py.detach(move || harness::run_scenario(&cfg)).map_err(py_err)?;
    to_py(py, &r)
}

/// One row per (value, scheme, seed); `schemes` defaults to all three.
#[pyfunction]
#[pyo3(signature = (scenario, axis, values, schemes = None, seeds = None))]
fn sweep<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    axis: &str,
    values: Vec<f64>,
    schemes: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let axis: SweepAxis = axis.parse().map_err(py_err)?;
    let schemes = match schemes {
        Some(s) => s.iter().map(|x| x.parse::<Scheme>()).collect::<Result<Vec<_>, _>>().map_err(py_err)?,
        None => Scheme::ALL.to_vec(),
    };
    let seeds = seeds.unwrap_or_else(|| vec![scenario.cfg.seed]);
    let cfg = scenario.cfg.clone();
    let rows = py
        .detach(move || harness::sweep(&cfg, axis, &values, &schemes, &seeds))
        .map_err(py_err)?;
    to_py(py, &rows)
}

/// Aggregate channel gain from every AP to a receiver at `(x, y)`.
#[pyfunction]
fn channel_gains(scenario: &PyScenario, x: f64, y: f64) -> PyResult<Vec<f64>> {
    let net = Network::new(&scenario.cfg).map_err(py_err)?;
    Ok(net.gains(&Vector3::new(x, y, scenario.cfg.receiver_height())))
}

/// Largest per-VCSEL power meeting the eye-safety limit.
#[pyfunction]
fn eye_safe_power(scenario: &PyScenario) -> PyResult<f64> {
    Ok(Network::new(&scenario.cfg).map_err(py_err)?.eye_safe_power)
}

#[pyfunction]
fn beam_radius(w0: f64, z: f64, z_r: f64) -> f64 {
    pdpopa::optics::beam_radius(w0, z, z_r)
}

#[pyfunction]
fn sinr_gap(target_ber: f64) -> PyResult<f64> {
    phy::sinr_gap(target_ber).map_err(py_err)
}

#[pyfunction]
fn ber_upper_bound(sinr: f64, order: usize) -> f64 {
    phy::ber_upper_bound(sinr, order)
}

/// Monte-Carlo BER of the OFDM chain for unit-weight links.
#[pyfunction]
#[pyo3(signature = (scenario, snr_db, order = 4, frames = 1000))]
fn simulate_ber<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    snr_db: Vec<f64>,
    order: usize,
    frames: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let ofdm = scenario.cfg.phy_params().map_err(py_err)?.ofdm;
    let run = phy::BerRun::new(order, frames, scenario.cfg.seed);
    let points = py
        .detach(move || phy::simulate_ber_curve(&[1.0], &ofdm, &snr_db, &run))
        .map_err(py_err)?;
    to_py(py, &points)
}

#[pyfunction]
fn persistence_prob(tau: f64, mean_residence: f64, mean_session: f64, omega: f64) -> f64 {
    predictor::persistence_prob(tau, mean_residence, mean_session, omega)
}

/// PMF of `Binomial(n_now, p_tau) + Poisson(poisson_mean)`.
#[pyfunction]
#[pyo3(signature = (n_now, p_tau, poisson_mean, tail_cutoff = 1e-12))]
fn transient_pmf(n_now: u32, p_tau: f64, poisson_mean: f64, tail_cutoff: f64) -> PyResult<Vec<f64>> {
    Ok(predictor::transient_pmf(n_now, p_tau, poisson_mean, tail_cutoff).map_err(py_err)?.probs)
}

/// Smallest `n` with `P(N > n) <= epsilon`.
#[pyfunction]
fn forecast_quantile(pmf: Vec<f64>, epsilon: f64) -> PyResult<u32> {
    let pmf = predictor::Pmf { probs: pmf, retained: 1.0 };
    predictor::forecast_quantile(&pmf, epsilon).map_err(py_err)
}

/// Energy-efficient allocation at one AP. Each user is described by its rate
/// coefficient, power floor and power cap.
#[pyfunction]
#[pyo3(signature = (coefficients, floors, caps, budget, rate_scale, tol = 1e-6, max_iter = 500))]
#[allow(clippy::too_many_arguments)]
fn optimize_ap<'py>(
    py: Python<'py>,
    coefficients: Vec<f64>,
    floors: Vec<f64>,
    caps: Vec<f64>,
    budget: f64,
    rate_scale: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyAny>> {
    if coefficients.len() != floors.len() || coefficients.len() != caps.len() {
        return Err(PyValueError::new_err("coefficients, floors and caps must have equal length"));
    }
    let users = coefficients
        .iter()
        .zip(&floors)
        .zip(&caps)
        .map(|((&coefficient, &floor), &cap)| ApUser { coefficient, floor, cap })
        .collect();
    let problem = ApProblem {
        users,
        budget,
        rate_scale,
    };
    let params = OptimizerParams {
        tol,
        max_iter,
        ..OptimizerParams::default()
    };
    let r = optimizer::optimize_ap(&problem, &params, None).map_err(py_err)?;
    to_py(py, &r)
}

#[pymodule]
pub fn pdpopa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", harness::TOOL_VERSION)?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(channel_gains, m)?)?;
    m.add_function(wrap_pyfunction!(eye_safe_power, m)?)?;
    m.add_function(wrap_pyfunction!(beam_radius, m)?)?;
    m.add_function(wrap_pyfunction!(sinr_gap, m)?)?;
    m.add_function(wrap_pyfunction!(ber_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ber, m)?)?;
    m.add_function(wrap_pyfunction!(persistence_prob, m)?)?;
    m.add_function(wrap_pyfunction!(transient_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_ap, m)?)?;
    Ok(())
}
