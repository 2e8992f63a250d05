//! Python bindings: a thin, JSON-friendly veneer over revwalk-core.
//!
//! Graphs and environments are wrapped as classes; reports come back as
//! plain Python dicts mirroring the CLI's JSON output. Exact rationals are
//! rendered as `"p/q"` strings.

// pyo3's proc macros insert PyErr conversions that trip this lint.
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};

use revwalk_core::graph::{
    is_strongly_connected, is_two_connected, reverse_graph, DirectedGraph,
};
use revwalk_core::{
    EnvironmentSampler, MomentOracle, WeightFamily,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// serde_json -> Python, recursively. Integers stay ints, everything else
/// maps to the obvious type.
fn value_to_py(py: Python<'_>, v: &serde_json::Value) -> PyObject {
    match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => PyBool::new_bound(py, *b).to_object(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_object(py)
            } else if let Some(u) = n.as_u64() {
                u.to_object(py)
            } else {
                n.as_f64().expect("number is finite").to_object(py)
            }
        }
        serde_json::Value::String(s) => s.to_object(py),
        serde_json::Value::Array(items) => {
            let list = PyList::new_bound(py, items.iter().map(|v| value_to_py(py, v)));
            list.to_object(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, v) in map {
                dict.set_item(k, value_to_py(py, v)).expect("dict insert");
            }
            dict.to_object(py)
        }
    }
}

/// Python -> serde_json for weight/environment inputs: dicts, lists,
/// strings, ints, floats, bools, None.
fn py_to_value(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    if obj.is_none() {
        return Ok(serde_json::Value::Null);
    }
    if let Ok(b) = obj.downcast::<PyBool>() {
        return Ok(serde_json::Value::Bool(b.is_true()));
    }
    if let Ok(i) = obj.extract::<i64>() {
        return Ok(serde_json::json!(i));
    }
    if let Ok(f) = obj.extract::<f64>() {
        return Ok(serde_json::json!(f));
    }
    if let Ok(s) = obj.extract::<String>() {
        return Ok(serde_json::Value::String(s));
    }
    if let Ok(list) = obj.downcast::<PyList>() {
        let items: PyResult<Vec<serde_json::Value>> =
            list.iter().map(|item| py_to_value(&item)).collect();
        return Ok(serde_json::Value::Array(items?));
    }
    if let Ok(dict) = obj.downcast::<PyDict>() {
        let mut map = serde_json::Map::new();
        for (k, v) in dict.iter() {
            map.insert(k.extract::<String>()?, py_to_value(&v)?);
        }
        return Ok(serde_json::Value::Object(map));
    }
    Err(PyValueError::new_err(format!(
        "unsupported value of type {}",
        obj.get_type().name()?
    )))
}

fn weights_from_py(g: &DirectedGraph, alpha: &Bound<'_, PyAny>) -> PyResult<WeightFamily> {
    let text = py_to_value(alpha)?.to_string();
    WeightFamily::from_json(g, &text).map_err(err)
}

/// Finite directed graph with named vertices and no parallel edges.
#[pyclass(name = "Graph")]
#[derive(Clone)]
struct PyGraph {
    inner: DirectedGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(vertices: Vec<String>, edges: Vec<(String, String)>) -> PyResult<Self> {
        let pairs: Vec<(String, String)> = edges;
        revwalk_core::build_graph(&vertices, &pairs)
            .map(|inner| PyGraph { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        DirectedGraph::from_json(text)
            .map(|inner| PyGraph { inner })
            .map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn vertex_names(&self) -> Vec<String> {
        self.inner
            .vertices()
            .map(|v| self.inner.name(v).to_owned())
            .collect()
    }

    fn edge_names(&self) -> Vec<String> {
        self.inner
            .edges()
            .iter()
            .map(|&e| self.inner.edge_name(e))
            .collect()
    }

    fn is_strongly_connected(&self) -> bool {
        is_strongly_connected(&self.inner)
    }

    fn is_two_connected(&self) -> bool {
        is_two_connected(&self.inner)
    }

    fn reversed(&self) -> PyGraph {
        PyGraph {
            inner: reverse_graph(&self.inner),
        }
    }

    /// Connectivity report matching `revwalk graph check`.
    fn check(&self, py: Python<'_>) -> PyObject {
        let rev = reverse_graph(&self.inner);
        value_to_py(
            py,
            &serde_json::json!({
                "vertices": self.inner.vertex_count(),
                "edges": self.inner.edge_count(),
                "strongly_connected": is_strongly_connected(&self.inner),
                "two_connected": is_two_connected(&self.inner),
                "reversed_two_connected": is_two_connected(&rev),
                "has_self_loops": self.inner.has_self_loops(),
            }),
        )
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(vertices={}, edges={})",
            self.inner.vertex_count(),
            self.inner.edge_count()
        )
    }
}

/// Transition probabilities, one positive unit row per vertex. Carries its
/// graph so edge labels survive round trips.
#[pyclass(name = "Environment")]
#[derive(Clone)]
struct PyEnvironment {
    graph: DirectedGraph,
    inner: revwalk_core::Environment,
}

#[pymethods]
impl PyEnvironment {
    #[staticmethod]
    fn from_json(graph: &PyGraph, text: &str) -> PyResult<Self> {
        revwalk_core::Environment::from_json(&graph.inner, text)
            .map(|inner| PyEnvironment {
                graph: graph.inner.clone(),
                inner,
            })
            .map_err(err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode() {
            revwalk_core::WeightMode::Exact => "exact",
            revwalk_core::WeightMode::Float => "float",
        }
    }

    fn graph(&self) -> PyGraph {
        PyGraph {
            inner: self.graph.clone(),
        }
    }

    /// Edge label -> probability, as floats.
    fn probabilities(&self) -> std::collections::BTreeMap<String, f64> {
        self.graph
            .edges()
            .iter()
            .map(|&e| (self.graph.edge_name(e), self.inner.prob_f64(e)))
            .collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json(&self.graph)
    }

    fn __repr__(&self) -> String {
        format!(
            "Environment(mode={:?}, edges={})",
            self.mode(),
            self.graph.edge_count()
        )
    }
}

/// One seeded Dirichlet(alpha) environment.
#[pyfunction]
fn sample_dirichlet_environment(
    graph: &PyGraph,
    alpha: &Bound<'_, PyAny>,
    seed: u64,
) -> PyResult<PyEnvironment> {
    let weights = weights_from_py(&graph.inner, alpha)?;
    revwalk_core::sample_dirichlet_environment(&graph.inner, &weights, seed)
        .map(|inner| PyEnvironment {
            graph: graph.inner.clone(),
            inner,
        })
        .map_err(err)
}

/// One seeded draw from a named non-Dirichlet family
/// ("logit-normal" or "mixture").
#[pyfunction]
fn sample_nondirichlet_environment(
    graph: &PyGraph,
    spec: &str,
    seed: u64,
) -> PyResult<PyEnvironment> {
    revwalk_core::sample_nondirichlet_environment(&graph.inner, spec, seed)
        .map(|inner| PyEnvironment {
            graph: graph.inner.clone(),
            inner,
        })
        .map_err(err)
}

/// Time reversal: the returned environment lives on the reversed graph.
#[pyfunction]
fn reverse_environment(env: &PyEnvironment) -> PyResult<PyEnvironment> {
    let rev = reverse_graph(&env.graph);
    revwalk_core::reverse_environment(&env.graph, &env.inner)
        .map(|inner| PyEnvironment { graph: rev, inner })
        .map_err(err)
}

/// Vertex name -> stationary probability of the quenched walk.
#[pyfunction]
fn stationary_distribution(
    env: &PyEnvironment,
    py: Python<'_>,
) -> PyResult<PyObject> {
    let pi = revwalk_core::stationary_distribution(&env.graph, &env.inner).map_err(err)?;
    Ok(value_to_py(py, &pi.to_json(&env.graph)))
}

/// All null-divergence integer flows with total at most `max_total`, as
/// edge-label -> value dicts.
#[pyfunction]
fn enumerate_null_flows(
    graph: &PyGraph,
    max_total: u64,
    py: Python<'_>,
) -> PyResult<PyObject> {
    let flows = revwalk_core::enumerate_null_flows(&graph.inner, max_total).map_err(err)?;
    let items: Vec<serde_json::Value> = flows
        .iter()
        .map(|f| {
            f.flow()
                .to_json(&graph.inner)
                .parse()
                .expect("flow JSON parses")
        })
        .collect();
    Ok(value_to_py(py, &serde_json::Value::Array(items)))
}

/// Product-identity check between Dirichlet(alpha) moments and the reversed
/// oracle over all bounded null-divergence flows.
#[pyfunction]
fn check_compatibility(
    graph: &PyGraph,
    alpha: &Bound<'_, PyAny>,
    max_total: u64,
    py: Python<'_>,
) -> PyResult<PyObject> {
    let weights = weights_from_py(&graph.inner, alpha)?;
    let f = MomentOracle::dirichlet(weights.clone());
    let f_rev = MomentOracle::dirichlet(revwalk_core::reversed_weights(&graph.inner, &weights));
    let report = revwalk_core::check_compatibility(
        &graph.inner,
        &f,
        &f_rev,
        max_total,
        f.natural_policy(),
    )
    .map_err(err)?;
    Ok(value_to_py(py, &report.to_json(&graph.inner)))
}

/// Seeded simulation check of the reversal law; see `revwalk verify-reversal`.
#[pyfunction]
fn verify_reversal_law(
    graph: &PyGraph,
    alpha: &Bound<'_, PyAny>,
    n_samples: usize,
    seed: u64,
    py: Python<'_>,
) -> PyResult<PyObject> {
    let weights = weights_from_py(&graph.inner, alpha)?;
    let check = revwalk_core::verify_reversal_law(&graph.inner, &weights, n_samples, seed)
        .map_err(err)?;
    Ok(value_to_py(py, &check.to_json(&reverse_graph(&graph.inner))))
}

/// Cross-site dependence scan of reversed environments. Pass either
/// Dirichlet weights or a named non-Dirichlet family.
#[pyfunction]
#[pyo3(signature = (graph, n_samples, seed, alpha=None, spec=None))]
fn independence_test(
    graph: &PyGraph,
    n_samples: usize,
    seed: u64,
    alpha: Option<&Bound<'_, PyAny>>,
    spec: Option<&str>,
    py: Python<'_>,
) -> PyResult<PyObject> {
    let sampler = match (alpha, spec) {
        (Some(alpha), None) => EnvironmentSampler::Dirichlet {
            alpha: weights_from_py(&graph.inner, alpha)?,
        },
        (None, Some(spec)) => revwalk_core::nondirichlet_sampler(&graph.inner, spec).map_err(err)?,
        _ => return Err(PyValueError::new_err("pass exactly one of alpha or spec")),
    };
    let report =
        revwalk_core::independence_test(&graph.inner, &sampler, n_samples, seed).map_err(err)?;
    Ok(value_to_py(py, &report.to_json()))
}

/// Reconstructs the row law from moment oracles built out of the weights:
/// mode "exact" uses closed forms, mode "float" estimates moments from
/// `samples` seeded draws. Returns the full diagnostic report.
#[pyfunction]
#[pyo3(signature = (graph, alpha, n_max=4, mode="exact", samples=2000, seed=17))]
fn characterize(
    graph: &PyGraph,
    alpha: &Bound<'_, PyAny>,
    n_max: u32,
    mode: &str,
    samples: usize,
    seed: u64,
    py: Python<'_>,
) -> PyResult<PyObject> {
    let g = &graph.inner;
    let weights = weights_from_py(g, alpha)?;
    let rev = reverse_graph(g);
    let (f, f_rev) = match mode {
        "exact" => (
            MomentOracle::dirichlet(weights.clone()),
            MomentOracle::dirichlet(revwalk_core::reversed_weights(g, &weights)),
        ),
        "float" => {
            let mut envs = Vec::with_capacity(samples);
            let mut rev_envs = Vec::with_capacity(samples);
            for i in 0..samples {
                let env = revwalk_core::sample_dirichlet_environment(g, &weights, seed + i as u64)
                    .map_err(err)?;
                rev_envs.push(revwalk_core::reverse_environment(g, &env).map_err(err)?);
                envs.push(env);
            }
            (
                MomentOracle::empirical(g, &envs).map_err(err)?,
                MomentOracle::empirical(&rev, &rev_envs).map_err(err)?,
            )
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode {other:?}, expected \"exact\" or \"float\""
            )))
        }
    };
    let result = revwalk_core::characterize(g, &f, &f_rev, n_max).map_err(err)?;
    Ok(value_to_py(py, &result.to_json(g)))
}

/// Exact Dirichlet mixed moment as a rational string: rows as "p/q" or
/// integer strings (floats also accepted), exponents as nonnegative ints.
#[pyfunction]
fn dirichlet_moment(alpha_row: Vec<String>, exponents: Vec<u32>) -> PyResult<String> {
    let row: Result<Vec<_>, _> = alpha_row
        .iter()
        .map(|s| revwalk_core::numeric::rat_from_str(s))
        .collect();
    let row = row.map_err(err)?;
    revwalk_core::dirichlet_moment(&row, &exponents)
        .map(|r| r.to_string())
        .map_err(err)
}

#[pymodule]
fn revwalk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_function(wrap_pyfunction!(sample_dirichlet_environment, m)?)?;
    m.add_function(wrap_pyfunction!(sample_nondirichlet_environment, m)?)?;
    m.add_function(wrap_pyfunction!(reverse_environment, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_null_flows, m)?)?;
    m.add_function(wrap_pyfunction!(check_compatibility, m)?)?;
    m.add_function(wrap_pyfunction!(verify_reversal_law, m)?)?;
    m.add_function(wrap_pyfunction!(independence_test, m)?)?;
    m.add_function(wrap_pyfunction!(characterize, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_moment, m)?)?;
    m.add("DEFAULT_SEED", 17)?;
    Ok(())
}
