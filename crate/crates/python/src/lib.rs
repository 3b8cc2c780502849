//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use capmsize as core;
use core::analysis::{self, CurveKind};
use core::estimate::{self, EstimateOptions};
use core::ingest::ReturnPanel;
use core::simulate::{self as sim, Scheme, SimulationConfig};

create_exception!(capmsize, CapmsizeError, PyException);

fn err(e: core::Error) -> PyErr {
    CapmsizeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| CapmsizeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| CapmsizeError::new_err(e.to_string()))
}

fn parse_enum<T: serde::de::DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|e| CapmsizeError::new_err(format!("'{name}': {e}")))
}

/// Size-dependent market model.
#[pyclass(name = "MarketModel", module = "capmsize", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: core::MarketModel,
}

#[pymethods]
impl PyModel {
    /// Build from a parameter dict (same layout as the TOML `model` table).
    #[new]
    fn new(py: Python<'_>, params: &Bound<'_, PyAny>) -> PyResult<Self> {
        let p: core::MarketModelParams = from_py(py, params)?;
        Ok(Self {
            inner: core::MarketModel::new(p).map_err(err)?,
        })
    }

    /// `alpha = mu c`, `beta = 1 + gamma c`, `sigma = rho`.
    #[staticmethod]
    fn linear_case(n: usize, mu: f64, gamma: f64, rho: f64, g_s: f64, sigma_s: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core::MarketModel::linear_case(n, mu, gamma, rho, g_s, sigma_s).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.params())
    }

    /// Dict with alpha, alpha_star, beta and sigma at `c`.
    fn eval<'py>(&self, py: Python<'py>, c: f64) -> PyResult<Bound<'py, PyAny>> {
        let k = self.inner.eval(c).map_err(err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("alpha", k.alpha)?;
        d.set_item("alpha_star", k.alpha_star)?;
        d.set_item("beta", k.beta)?;
        d.set_item("sigma", k.sigma)?;
        Ok(d.into_any())
    }

    fn drift_tilde(&self, c: f64) -> PyResult<f64> {
        self.inner.drift_tilde(c).map_err(err)
    }

    fn diffusion_tilde_sq(&self, c: f64) -> PyResult<f64> {
        self.inner.diffusion_tilde_sq(c).map_err(err)
    }

    fn wealth_drift_diffusion(&self, c: f64) -> PyResult<(f64, f64)> {
        self.inner.wealth_drift_diffusion(c).map_err(err)
    }

    #[pyo3(signature = (probe_range = (-1000.0, 1000.0)))]
    fn stability<'py>(&self, py: Python<'py>, probe_range: (f64, f64)) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analysis::stability_check(&self.inner, probe_range).map_err(err)?)
    }

    /// Stationary density of the relative size on a uniform grid.
    fn stationary_density<'py>(&self, py: Python<'py>, lo: f64, hi: f64, step: f64) -> PyResult<Bound<'py, PyAny>> {
        let grid = analysis::uniform_grid(lo, hi, step).map_err(err)?;
        to_py(py, &analysis::stationary_density(&self.inner, &grid).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("MarketModel(n={})", self.inner.n())
    }
}

/// Simulated paths; `c(path)` is a list of state vectors, one per stored time.
#[pyclass(name = "Ensemble", module = "capmsize")]
struct PyEnsemble {
    inner: sim::SimulationEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.paths.len()
    }

    fn c(&self, path: usize) -> PyResult<Vec<Vec<f64>>> {
        let rec = self
            .inner
            .paths
            .get(path)
            .ok_or_else(|| CapmsizeError::new_err(format!("no path {path}")))?;
        Ok((0..self.inner.times.len()).map(|i| rec.c_at(i).to_vec()).collect())
    }

    fn c_across_paths(&self, t: f64, k: usize) -> PyResult<Vec<f64>> {
        let i = self
            .inner
            .time_index(t)
            .ok_or_else(|| CapmsizeError::new_err(format!("time {t} is not stored")))?;
        Ok(self.inner.c_across_paths(i, k))
    }

    fn long_run_weight_stats<'py>(&self, py: Python<'py>, t_from: f64, t_to: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analysis::long_run_weight_stats(&self.inner, (t_from, t_to)).map_err(err)?)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| CapmsizeError::new_err(format!("{path}: {e}")))?;
        self.inner.write_csv(std::io::BufWriter::new(f)).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (model, n_paths, t_end, dt, seed, scheme = "euler", record_interval = 1.0, initial_c = None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    model: &PyModel,
    n_paths: usize,
    t_end: f64,
    dt: f64,
    seed: u64,
    scheme: &str,
    record_interval: f64,
    initial_c: Option<Vec<f64>>,
) -> PyResult<PyEnsemble> {
    let mut cfg = SimulationConfig::new(model.inner.clone(), n_paths, t_end, dt, seed);
    cfg.scheme = parse_enum::<Scheme>(scheme)?;
    cfg.record_interval = record_interval;
    cfg.initial.c = initial_c.unwrap_or_default();
    Ok(PyEnsemble {
        inner: sim::simulate(&cfg).map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (c, kind = "modified", fit_range = (10, 90)))]
fn curve_snapshot<'py>(py: Python<'py>, c: Vec<f64>, kind: &str, fit_range: (usize, usize)) -> PyResult<Bound<'py, PyAny>> {
    let kind = parse_enum::<CurveKind>(kind)?;
    to_py(py, &analysis::curve_snapshot(0.0, &c, kind, fit_range).map_err(err)?)
}

#[pyfunction]
fn phi_map(weights: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(core::model::phi_map(&weights).map_err(err)?.as_slice().to_vec())
}

#[pyfunction]
fn phi_inverse(c: Vec<f64>) -> PyResult<Vec<f64>> {
    let v = core::model::RelativeSizeVector::new(c).map_err(err)?;
    Ok(core::model::phi_inverse(&v))
}

#[pyfunction]
fn to_geometric(r: f64) -> PyResult<f64> {
    core::returns::to_geometric(r).map_err(err)
}

#[pyfunction]
fn to_arithmetic(q: f64) -> f64 {
    core::returns::to_arithmetic(q)
}

#[pyfunction]
fn ols<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &estimate::ols(&x, &y).map_err(err)?)
}

#[pyfunction]
fn ljung_box<'py>(py: Python<'py>, series: Vec<f64>, lags: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &estimate::ljung_box(&series, lags).map_err(err)?)
}

#[pyfunction]
fn jarque_bera<'py>(py: Python<'py>, series: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &estimate::jarque_bera(&series).map_err(err)?)
}

#[pyfunction]
fn funds_regression<'py>(py: Python<'py>, small: Vec<f64>, mid: Vec<f64>, large: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &estimate::funds_regression(&small, &mid, &large).map_err(err)?)
}

/// Runs the price and premium pipelines on a canonical panel CSV.
/// `options` uses the layout of the `[estimate.options]` table.
#[pyfunction]
#[pyo3(signature = (panel_csv, options = None))]
fn estimate_panel<'py>(
    py: Python<'py>,
    panel_csv: &str,
    options: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let opts: EstimateOptions = match options {
        Some(o) => from_py(py, o)?,
        None => EstimateOptions::default(),
    };
    let text = std::fs::read_to_string(panel_csv).map_err(|e| CapmsizeError::new_err(format!("{panel_csv}: {e}")))?;
    let panel = ReturnPanel::read_csv_str(&text, panel_csv).map_err(err)?;
    let (price, premium) = py.detach(|| estimate::run_pipeline(&panel, &opts)).map_err(err)?;
    Ok((to_py(py, &price)?, to_py(py, &premium)?))
}

/// Writes a synthetic panel with planted parameters to `path`.
#[pyfunction]
#[pyo3(signature = (path, seed, gamma = 0.0045, mu = 0.0069, rho = 0.052))]
fn write_synthetic_panel(path: &str, seed: u64, gamma: f64, mu: f64, rho: f64) -> PyResult<()> {
    let dgp = core::synthetic::PanelDgp {
        gamma,
        mu,
        rho,
        ..Default::default()
    };
    let sp = core::synthetic::synthetic_panel(&dgp, seed).map_err(err)?;
    let f = std::fs::File::create(path).map_err(|e| CapmsizeError::new_err(format!("{path}: {e}")))?;
    sp.panel.write_csv(std::io::BufWriter::new(f)).map_err(err)
}

#[pymodule]
#[pyo3(name = "capmsize")]
fn capmsize_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CapmsizeError", m.py().get_type::<CapmsizeError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(curve_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(phi_map, m)?)?;
    m.add_function(wrap_pyfunction!(phi_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(to_geometric, m)?)?;
    m.add_function(wrap_pyfunction!(to_arithmetic, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(ljung_box, m)?)?;
    m.add_function(wrap_pyfunction!(jarque_bera, m)?)?;
    m.add_function(wrap_pyfunction!(funds_regression, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_panel, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_panel, m)?)?;
    Ok(())
}
