//! Python bindings. Reports come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use wardrop::analytics;
use wardrop::bilev::{self, BilevParams};
use wardrop::equilibrium::{self, Algorithm, AssignOptions, CostKind};
use wardrop::gls;
use wardrop::inverse::{self, DualForm, Hyper, InverseVIProblem, Scenario};
use wardrop::{network, DemandVector, FlowState};

fn err(e: wardrop::Error) -> PyErr {
    if e.is_data_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn demand(values: Vec<f64>) -> PyResult<DemandVector> {
    DemandVector::new(values).map_err(err)
}

fn options(algorithm: &str, tol: f64, max_iter: Option<usize>) -> PyResult<AssignOptions> {
    let (algorithm, default_cap) = match algorithm {
        "msa" => (Algorithm::Msa, equilibrium::DEFAULT_MSA_MAX_ITER),
        "fw" => (Algorithm::Fw, equilibrium::DEFAULT_FW_MAX_ITER),
        "fw-classic" => (Algorithm::FwClassic, equilibrium::DEFAULT_FW_MAX_ITER),
        other => return Err(PyValueError::new_err(format!("unknown algorithm `{other}`"))),
    };
    Ok(AssignOptions {
        algorithm,
        tol,
        max_iter: max_iter.unwrap_or(default_cap),
        track_routes: false,
    })
}

/// Road network with its OD pairs.
#[pyclass(frozen, skip_from_py_object, module = "wardrop_py")]
#[derive(Clone)]
struct Network {
    inner: wardrop::Network,
    trips: DemandVector,
}

#[pymethods]
impl Network {
    /// Reads a network file and a trips file.
    #[staticmethod]
    fn load(net: std::path::PathBuf, trips: std::path::PathBuf) -> PyResult<Self> {
        let (inner, trips) = network::load_network(&net, &trips).map_err(err)?;
        Ok(Network { inner, trips })
    }

    /// The Sioux Falls benchmark shipped with the library.
    #[staticmethod]
    fn sioux_falls() -> Self {
        let f = wardrop::fixtures::sioux_falls();
        Network {
            inner: f.network,
            trips: f.demand,
        }
    }

    #[getter]
    fn link_count(&self) -> usize {
        self.inner.link_count()
    }

    #[getter]
    fn od_count(&self) -> usize {
        self.inner.od_count()
    }

    /// Demand read from the trips file, in OD order.
    #[getter]
    fn demand(&self) -> Vec<f64> {
        self.trips.values().to_vec()
    }

    /// `(origin, destination)` node ids in OD order.
    fn od_pairs(&self) -> Vec<(u64, u64)> {
        self.inner
            .od_pairs()
            .iter()
            .map(|od| (self.inner.node_id(od.origin), self.inner.node_id(od.destination)))
            .collect()
    }

    /// `(tail, head, free_flow_time, capacity)` by link.
    fn links(&self) -> Vec<(u64, u64, f64, f64)> {
        self.inner
            .links()
            .iter()
            .map(|l| (self.inner.node_id(l.tail), self.inner.node_id(l.head), l.free_flow_time, l.capacity))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(nodes={}, links={}, od_pairs={})",
            self.inner.node_count(),
            self.inner.link_count(),
            self.inner.od_count()
        )
    }
}

/// Polynomial congestion factor `f(u) = sum_i beta_i u^i` with `beta_0 = 1`.
#[pyclass(frozen, skip_from_py_object, module = "wardrop_py")]
#[derive(Clone)]
struct CongestionFactor {
    inner: wardrop::CongestionFactor,
}

#[pymethods]
impl CongestionFactor {
    #[new]
    fn new(beta: Vec<f64>) -> PyResult<Self> {
        Ok(CongestionFactor {
            inner: wardrop::CongestionFactor::new(beta).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (alpha=0.15, power=4))]
    fn bpr(alpha: f64, power: usize) -> Self {
        CongestionFactor {
            inner: wardrop::CongestionFactor::bpr(alpha, power),
        }
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta().to_vec()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree()
    }

    fn __call__(&self, u: f64) -> f64 {
        self.inner.value(u)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(CongestionFactor { inner })
    }

    fn __repr__(&self) -> String {
        format!("CongestionFactor(beta={:?})", self.inner.beta())
    }
}

#[derive(Serialize)]
struct Assignment<'a> {
    link_flows: &'a [f64],
    relative_gap: f64,
    iterations: usize,
    objective: f64,
    termination: equilibrium::Termination,
}

/// Equilibrium (`cost="travel"`) or system-optimal (`cost="marginal"`) flows.
#[pyfunction]
#[pyo3(signature = (network, demand, cf, cost="travel", algorithm="fw", tol=1e-8, max_iter=None))]
#[allow(clippy::too_many_arguments)]
fn assign(
    py: Python<'_>,
    network: &Network,
    demand: Vec<f64>,
    cf: &CongestionFactor,
    cost: &str,
    algorithm: &str,
    tol: f64,
    max_iter: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let kind = match cost {
        "travel" => CostKind::Travel,
        "marginal" => CostKind::Marginal,
        other => return Err(PyValueError::new_err(format!("unknown cost `{other}`"))),
    };
    let opts = options(algorithm, tol, max_iter)?;
    let g = self::demand(demand)?;
    let r = py
        .detach(|| equilibrium::assign(&network.inner, &g, &cf.inner, kind, &opts))
        .map_err(err)?;
    to_py(
        py,
        &Assignment {
            link_flows: &r.flow.link_flows,
            relative_gap: r.relative_gap,
            iterations: r.iterations,
            objective: r.objective,
            termination: r.termination,
        },
    )
}

/// Price of anarchy at observed flows, or at the solved equilibrium.
#[pyfunction]
#[pyo3(signature = (network, demand, cf, observed=None, tol=1e-10))]
fn price_of_anarchy(
    py: Python<'_>,
    network: &Network,
    demand: Vec<f64>,
    cf: &CongestionFactor,
    observed: Option<Vec<f64>>,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let g = self::demand(demand)?;
    let r = py
        .detach(|| analytics::price_of_anarchy(&network.inner, &g, &cf.inner, observed.as_deref(), tol))
        .map_err(err)?;
    to_py(py, &r)
}

/// Partials of the optimal Beckmann value in free-flow time and capacity.
#[pyfunction]
#[pyo3(signature = (network, demand, cf, tol=1e-10))]
fn sensitivity(
    py: Python<'_>,
    network: &Network,
    demand: Vec<f64>,
    cf: &CongestionFactor,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let g = self::demand(demand)?;
    let (r, _) = py
        .detach(|| analytics::sensitivity(&network.inner, &g, &cf.inner, tol))
        .map_err(err)?;
    to_py(py, &r)
}

/// Fits a congestion factor to flows observed under the given demands.
/// Returns the factor and a dict of diagnostics.
#[pyfunction]
#[pyo3(signature = (network, demands, flows, c=1.5, n=8, gamma=1e3))]
fn estimate_cost(
    py: Python<'_>,
    network: &Network,
    demands: Vec<Vec<f64>>,
    flows: Vec<Vec<f64>>,
    c: f64,
    n: usize,
    gamma: f64,
) -> PyResult<(CongestionFactor, Py<PyAny>)> {
    if demands.len() != flows.len() {
        return Err(PyValueError::new_err(format!(
            "{} demand vectors for {} flow observations",
            demands.len(),
            flows.len()
        )));
    }
    let scenarios = demands
        .into_iter()
        .zip(flows)
        .map(|(g, x)| Scenario::new(network.inner.clone(), DemandVector::new(g)?, x))
        .collect::<wardrop::Result<Vec<_>>>()
        .map_err(err)?;
    let problem = InverseVIProblem {
        scenarios,
        hyper: Hyper { scale: c, degree: n, gamma },
        dual_form: DualForm::PerOrigin,
    };
    let est = py.detach(|| inverse::estimate_cost(&problem)).map_err(err)?;
    let diagnostics = to_py(
        py,
        &serde_json::json!({
            "epsilon": est.epsilon,
            "realized_gap": est.realized_gap,
            "observed_range": est.observed_range,
            "qp_iterations": est.qp_iterations,
            "kkt_residual": est.kkt.max(),
            "warnings": est.warnings,
        }),
    )?;
    Ok((CongestionFactor { inner: est.cf }, diagnostics))
}

/// Initial demand from repeated link counts by generalized least squares.
#[pyfunction]
#[pyo3(signature = (network, observations, k_routes=3))]
fn estimate_od(py: Python<'_>, network: &Network, observations: Vec<Vec<f64>>, k_routes: usize) -> PyResult<Py<PyAny>> {
    let obs = observations
        .into_iter()
        .map(FlowState::from_link_flows)
        .collect::<wardrop::Result<Vec<_>>>()
        .map_err(err)?;
    let est = py
        .detach(|| gls::estimate_initial_demand(&network.inner, &obs, k_routes))
        .map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "demand": est.demand.values(),
            "route_choice": est.p2.choice,
            "route_flows": est.p1.xi,
            "p2_residual": est.p2.residual,
        }),
    )
}

/// Demand multiplied by independent uniform factors in `[low, high]`.
#[pyfunction]
#[pyo3(signature = (demand, seed, low=0.8, high=1.2))]
fn perturb_demand(demand: Vec<f64>, seed: u64, low: f64, high: f64) -> PyResult<Vec<f64>> {
    let g = bilev::perturb_demand(&self::demand(demand)?, low, high, seed).map_err(err)?;
    Ok(g.values().to_vec())
}

/// Adjusts `initial` so equilibrium flows approach `target`.
#[pyfunction]
#[pyo3(signature = (network, cf, initial, target, iterations=7, rho=2, steps=10, inner_tol=1e-6))]
#[allow(clippy::too_many_arguments)]
fn adjust_od(
    py: Python<'_>,
    network: &Network,
    cf: &CongestionFactor,
    initial: Vec<f64>,
    target: Vec<f64>,
    iterations: usize,
    rho: u32,
    steps: u32,
    inner_tol: f64,
) -> PyResult<Py<PyAny>> {
    let params = BilevParams {
        rho,
        t: steps,
        max_iter: iterations,
        inner: AssignOptions {
            track_routes: false,
            ..AssignOptions::msa(inner_tol)
        },
        ..BilevParams::default()
    };
    let g0 = self::demand(initial)?;
    let (g, run) = py
        .detach(|| bilev::adjust_demand(&network.inner, &cf.inner, &g0, &target, &params))
        .map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "demand": g.values(),
            "objective": run.objective,
            "normalized_objective": run.normalized_objective(),
            "steps": run.steps,
            "termination": run.termination,
        }),
    )
}

#[pymodule]
fn wardrop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<CongestionFactor>()?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(price_of_anarchy, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_cost, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_od, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_demand, m)?)?;
    m.add_function(wrap_pyfunction!(adjust_od, m)?)?;
    Ok(())
}
