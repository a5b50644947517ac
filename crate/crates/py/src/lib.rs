//! Python bindings.

use brokergame::analytics::{run_experiment, stress_runner};
use brokergame::broker::existence_diagnostic;
use brokergame::sim::{path_seed as core_path_seed, simulate_path};
use brokergame::{
    BrokerMode, Error, LearningParam, Model, ModelParams, ScalarTable, SignalSource,
    StrategyConfig, TimeGrid,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

/// Parameter names accepted by `ModelParams`; risk coefficients are flattened
/// as `risk_informed_beta0` and so on.
const FIELDS: [&str; 23] = [
    "perm_impact",
    "cost_broker",
    "cost_informed",
    "cost_uninformed",
    "sigma_s",
    "s0",
    "kappa_alpha",
    "sigma_alpha",
    "alpha0",
    "rho",
    "kappa_u",
    "sigma_u",
    "theta_b",
    "sigma_b",
    "risk_informed_beta0",
    "risk_informed_beta1",
    "risk_informed_rho0",
    "risk_informed_rho1",
    "risk_broker_beta0",
    "risk_broker_beta1",
    "risk_broker_rho0",
    "risk_broker_rho1",
    "c_belief",
];

fn field_mut<'a>(p: &'a mut ModelParams, name: &str) -> Option<&'a mut f64> {
    Some(match name {
        "perm_impact" => &mut p.perm_impact,
        "cost_broker" => &mut p.cost_broker,
        "cost_informed" => &mut p.cost_informed,
        "cost_uninformed" => &mut p.cost_uninformed,
        "sigma_s" => &mut p.sigma_s,
        "s0" => &mut p.s0,
        "kappa_alpha" => &mut p.kappa_alpha,
        "sigma_alpha" => &mut p.sigma_alpha,
        "alpha0" => &mut p.alpha0,
        "rho" => &mut p.rho,
        "kappa_u" => &mut p.kappa_u,
        "sigma_u" => &mut p.sigma_u,
        "theta_b" => &mut p.theta_b,
        "sigma_b" => &mut p.sigma_b,
        "risk_informed_beta0" => &mut p.risk_informed.beta0,
        "risk_informed_beta1" => &mut p.risk_informed.beta1,
        "risk_informed_rho0" => &mut p.risk_informed.rho0,
        "risk_informed_rho1" => &mut p.risk_informed.rho1,
        "risk_broker_beta0" => &mut p.risk_broker.beta0,
        "risk_broker_beta1" => &mut p.risk_broker.beta1,
        "risk_broker_rho0" => &mut p.risk_broker.rho0,
        "risk_broker_rho1" => &mut p.risk_broker.rho1,
        "c_belief" => &mut p.c_belief,
        _ => return None,
    })
}

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_source(mode: &str) -> PyResult<SignalSource> {
    match mode {
        "price" => Ok(SignalSource::Price),
        "flow" => Ok(SignalSource::Flow),
        "naive" => Ok(SignalSource::Naive),
        other => Err(PyValueError::new_err(format!(
            "mode must be price, flow or naive, got {other:?}"
        ))),
    }
}

fn parse_broker(name: &str) -> PyResult<BrokerMode> {
    match name {
        "optimal" => Ok(BrokerMode::Optimal),
        "benchmark1" | "1" => Ok(BrokerMode::Benchmark1),
        "benchmark2" | "2" => Ok(BrokerMode::Benchmark2),
        "benchmark3" | "3" => Ok(BrokerMode::Benchmark3),
        other => Err(PyValueError::new_err(format!(
            "broker must be optimal, benchmark1, benchmark2 or benchmark3, got {other:?}"
        ))),
    }
}

fn parse_benchmarks(indices: &[usize]) -> PyResult<Vec<BrokerMode>> {
    indices
        .iter()
        .map(|&i| match i {
            1..=3 => Ok(BrokerMode::BENCHMARKS[i - 1]),
            _ => Err(PyValueError::new_err(format!("unknown benchmark {i}"))),
        })
        .collect()
}

/// Converts any serialisable value into plain Python objects through JSON.
fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn put_tables<'py>(dict: &Bound<'py, PyDict>, tables: &[(&str, &ScalarTable)]) -> PyResult<()> {
    for (name, table) in tables {
        dict.set_item(*name, table.values().to_vec())?;
    }
    Ok(())
}

fn times(grid: &TimeGrid) -> Vec<f64> {
    grid.times().collect()
}

/// Scalar model constants. Keyword arguments override the reference
/// calibration.
#[pyclass(name = "ModelParams", from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut p = PyModelParams {
            inner: ModelParams::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                p.set(&k.extract::<String>()?, v.extract()?)?;
            }
        }
        Ok(p)
    }

    /// Names accepted by `get`, `set` and the constructor.
    #[staticmethod]
    fn fields() -> Vec<&'static str> {
        FIELDS.to_vec()
    }

    fn get(&self, name: &str) -> PyResult<f64> {
        let mut p = self.inner;
        field_mut(&mut p, name)
            .map(|v| *v)
            .ok_or_else(|| PyValueError::new_err(format!("unknown parameter {name:?}")))
    }

    fn set(&mut self, name: &str, value: f64) -> PyResult<()> {
        let slot = field_mut(&mut self.inner, name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown parameter {name:?}")))?;
        *slot = value;
        Ok(())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for name in FIELDS {
            d.set_item(name, self.get(name)?)?;
        }
        Ok(d)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    /// SHA-256 of the canonical serialisation.
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("ModelParams({:?})", self.inner)
    }
}

/// Solved coefficients of both agents on a time grid.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (params=None, horizon=1.0, steps=1000))]
    fn new(
        py: Python<'_>,
        params: Option<PyModelParams>,
        horizon: f64,
        steps: usize,
    ) -> PyResult<Self> {
        let p = params.map(|p| p.inner).unwrap_or_default();
        let grid = TimeGrid::new(horizon, steps).map_err(to_py)?;
        let inner = py.detach(|| Model::new(&p, &grid)).map_err(to_py)?;
        Ok(PyModel { inner })
    }

    fn times(&self) -> Vec<f64> {
        times(self.inner.grid())
    }

    /// Columns `t, v_i, g2, z1..z8, f1, f2, f3`.
    fn trader_coefficients<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner.trader;
        let d = PyDict::new(py);
        d.set_item("t", self.times())?;
        put_tables(&d, &[("v_i", &c.v_i), ("g2", &c.g2)])?;
        for (i, z) in c.z.iter().enumerate() {
            d.set_item(format!("z{}", i + 1), z.values().to_vec())?;
        }
        put_tables(&d, &[("f1", &c.f1), ("f2", &c.f2), ("f3", &c.f3)])?;
        Ok(d)
    }

    /// `G2` as nested 4x4 lists, the feedback row, `g0` and `v_b`.
    fn broker_coefficients<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let b = &self.inner.broker;
        let d = PyDict::new(py);
        d.set_item("t", self.times())?;
        let g2: Vec<Vec<Vec<f64>>> =
            b.g2.values()
                .iter()
                .map(|m| {
                    (0..4)
                        .map(|i| (0..4).map(|j| m[(i, j)]).collect())
                        .collect()
                })
                .collect();
        d.set_item("g2", g2)?;
        let gain: Vec<Vec<f64>> = b
            .gain
            .values()
            .iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        d.set_item("gain", gain)?;
        put_tables(&d, &[("g0", &b.g0), ("v_b", &b.v_b)])?;
        d.set_item("reduction_gap", b.reduction_gap)?;
        Ok(d)
    }

    fn flow_coefficients<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let f = &self.inner.flow;
        let d = PyDict::new(py);
        d.set_item("t", self.times())?;
        put_tables(
            &d,
            &[
                ("g0", &f.g0),
                ("g_alpha", &f.g_alpha),
                ("g1", &f.g1),
                ("g5", &f.g5),
                ("g6", &f.g6),
                ("g7", &f.g7),
                ("g8", &f.g8),
                ("g9", &f.g9),
                ("k", &f.k),
                ("variance", &f.variance),
            ],
        )?;
        Ok(d)
    }

    /// Eigenvalues (four per grid point), row-scaled determinant and flagged
    /// grid indices of the existence check.
    fn existence_diagnostic<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner;
        let diag =
            existence_diagnostic(&m.belief, &m.trader_belief, &m.broker.v_b).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("t", self.times())?;
        let eig: Vec<Vec<f64>> = diag
            .eigenvalues
            .values()
            .iter()
            .map(|e| e.iter().copied().collect())
            .collect();
        d.set_item("eigenvalues", eig)?;
        d.set_item("scaled_det", diag.scaled_det.values().to_vec())?;
        d.set_item("flagged", diag.flagged)?;
        Ok(d)
    }

    /// Every series of one simulated path, keyed by column name.
    #[pyo3(signature = (seed, mode="price", broker="optimal", mispecify_qi=false))]
    fn simulate_path<'py>(
        &self,
        py: Python<'py>,
        seed: u64,
        mode: &str,
        broker: &str,
        mispecify_qi: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = StrategyConfig {
            signal_source: parse_source(mode)?,
            broker_mode: parse_broker(broker)?,
            mispecify_qi,
            ..StrategyConfig::default()
        };
        let path = py
            .detach(|| simulate_path(&self.inner, &cfg, seed))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        for (name, values) in path.series() {
            d.set_item(name, values)?;
        }
        Ok(d)
    }

    /// Outperformance report of the optimal broker against the benchmarks.
    #[pyo3(signature = (paths, seed=0, mode="price", benchmarks=vec![1, 2, 3], mispecify_qi=false))]
    fn run_experiment<'py>(
        &self,
        py: Python<'py>,
        paths: usize,
        seed: u64,
        mode: &str,
        benchmarks: Vec<usize>,
        mispecify_qi: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = StrategyConfig {
            signal_source: parse_source(mode)?,
            mispecify_qi,
            ..StrategyConfig::default()
        };
        let arms = parse_benchmarks(&benchmarks)?;
        let (report, _) = py
            .detach(|| run_experiment(&self.inner, &cfg, &arms, paths, seed))
            .map_err(to_py)?;
        to_python(py, &report)
    }
}

/// Stress sweep over the learning parameters scaled in the broker's model.
#[pyfunction]
#[pyo3(signature = (params, paths, seed=0, multipliers=vec![0.5, 1.5], mode="price", horizon=1.0, steps=1000))]
#[allow(clippy::too_many_arguments)]
fn stress<'py>(
    py: Python<'py>,
    params: PyModelParams,
    paths: usize,
    seed: u64,
    multipliers: Vec<f64>,
    mode: &str,
    horizon: f64,
    steps: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = TimeGrid::new(horizon, steps).map_err(to_py)?;
    let cfg = StrategyConfig {
        signal_source: parse_source(mode)?,
        ..StrategyConfig::default()
    };
    let cells = py
        .detach(|| {
            stress_runner(
                &params.inner,
                &grid,
                &LearningParam::ALL,
                &multipliers,
                &cfg,
                &BrokerMode::BENCHMARKS,
                paths,
                seed,
            )
        })
        .map_err(to_py)?;
    to_python(py, &cells)
}

/// Seed of path `n` in a run with base seed `base`.
#[pyfunction]
fn path_seed(base: u64, n: u64) -> u64 {
    core_path_seed(base, n)
}

#[pymodule]
fn brokergame_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(stress, m)?)?;
    m.add_function(wrap_pyfunction!(path_seed, m)?)?;
    Ok(())
}
