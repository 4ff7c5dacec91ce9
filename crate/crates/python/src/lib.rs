//! Python bindings: networks, dynamics, fitness, the two-target bound, modularity, statistics
//! and single evolutionary runs.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use grnlab_core::config::RunConfig;
use grnlab_core::evolution::run_two_phase;
use grnlab_core::fitness::{bound_breakdown, BinomialTable};
use grnlab_core::modularity::{normalized_q, optimal_modular_grn, remove_inter_module_edges};
use grnlab_core::rng::rng_from_seed;
use grnlab_core::{EvaluationMode, Evaluator, ModulePartition, Pattern, QNormTable, Recovery, TargetSet};

fn py_err(e: grnlab_core::Error) -> PyErr {
    match e {
        grnlab_core::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pattern(states: Vec<i8>) -> PyResult<Pattern> {
    Pattern::new(states).map_err(py_err)
}

fn target_set(targets: Vec<Vec<i8>>) -> PyResult<TargetSet> {
    TargetSet::new(targets.into_iter().map(pattern).collect::<PyResult<_>>()?).map_err(py_err)
}

fn rule(name: &str) -> PyResult<Recovery> {
    name.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn partition(g: &grnlab_core::Grn, modules: Option<Vec<usize>>) -> PyResult<ModulePartition> {
    match modules {
        Some(m) => ModulePartition::new(m),
        None => ModulePartition::halves(g.n()),
    }
    .map_err(py_err)
}

/// Ternary regulatory matrix; `rows[i][j]` is the effect of gene `j` on gene `i`.
#[pyclass(name = "Grn", module = "grnlab", eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyGrn {
    inner: grnlab_core::Grn,
}

#[pymethods]
impl PyGrn {
    #[new]
    fn new(rows: Vec<Vec<i8>>) -> PyResult<Self> {
        Ok(Self { inner: grnlab_core::Grn::from_rows(&rows).map_err(py_err)? })
    }

    #[staticmethod]
    fn zeros(n: usize) -> PyResult<Self> {
        Ok(Self { inner: grnlab_core::Grn::zeros(n).map_err(py_err)? })
    }

    /// Rows of `+`, `-`, `0` separated by `/`.
    #[staticmethod]
    fn from_compact(text: &str) -> PyResult<Self> {
        Ok(Self { inner: grnlab_core::Grn::from_compact(text).map_err(py_err)? })
    }

    /// The block-diagonal network attaining the two-target bound.
    #[staticmethod]
    fn optimal() -> Self {
        Self { inner: optimal_modular_grn() }
    }

    fn to_compact(&self) -> String {
        self.inner.to_compact()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn rows(&self) -> Vec<Vec<i8>> {
        self.inner.rows().map(|r| r.to_vec()).collect()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<i8> {
        self.check(row, col)?;
        Ok(self.inner.get(row, col))
    }

    fn set(&mut self, row: usize, col: usize, value: i8) -> PyResult<()> {
        self.check(row, col)?;
        if !(-1..=1).contains(&value) {
            return Err(PyValueError::new_err(format!("weight must be -1, 0 or 1, got {value}")));
        }
        self.inner.set(row, col, value);
        Ok(())
    }

    #[pyo3(signature = (modules=None))]
    fn without_inter_module_edges(&self, modules: Option<Vec<usize>>) -> PyResult<Self> {
        let part = partition(&self.inner, modules)?;
        Ok(Self { inner: remove_inter_module_edges(&self.inner, &part).map_err(py_err)? })
    }

    fn __repr__(&self) -> String {
        format!("Grn({:?})", self.inner.to_compact())
    }
}

impl PyGrn {
    fn check(&self, row: usize, col: usize) -> PyResult<()> {
        let n = self.inner.n();
        if row >= n || col >= n {
            return Err(PyValueError::new_err(format!("index ({row}, {col}) outside a {n}x{n} network")));
        }
        Ok(())
    }
}

/// One synchronous update of `state` (entries -1/+1).
#[pyfunction]
fn step(g: PyRef<'_, PyGrn>, state: Vec<i8>) -> PyResult<Vec<i8>> {
    Ok(grnlab_core::grn::step(&g.inner, &pattern(state)?).map_err(py_err)?.states().to_vec())
}

/// `target` if the trajectory from `start` visits it within `horizon` steps, else the state reached.
#[pyfunction]
#[pyo3(signature = (g, start, target, horizon=20))]
fn regulate(g: PyRef<'_, PyGrn>, start: Vec<i8>, target: Vec<i8>, horizon: usize) -> PyResult<Vec<i8>> {
    let end = grnlab_core::grn::regulate(&g.inner, &pattern(start)?, &pattern(target)?, horizon).map_err(py_err)?;
    Ok(end.states().to_vec())
}

/// The state scored against `target` under the recovery rule (`settle` or `visit`).
#[pyfunction]
#[pyo3(signature = (g, start, target, horizon=20, rule="settle"))]
fn recover(g: PyRef<'_, PyGrn>, start: Vec<i8>, target: Vec<i8>, horizon: usize, rule: &str) -> PyResult<Vec<i8>> {
    let end = grnlab_core::grn::recover(&g.inner, &pattern(start)?, &pattern(target)?, horizon, self::rule(rule)?)
        .map_err(py_err)?;
    Ok(end.states().to_vec())
}

fn evaluator(n: usize, p: f64, rule_name: &str) -> PyResult<Evaluator> {
    let table = BinomialTable::new(n, p).map_err(py_err)?;
    Ok(Evaluator::new(table, EvaluationMode::Distributional).map_err(py_err)?.with_recovery(rule(rule_name)?))
}

/// Exact expected recovery fitness, averaged over `targets`.
#[pyfunction]
#[pyo3(signature = (g, targets, p=0.15, rule="settle"))]
fn distributional_fitness(g: PyRef<'_, PyGrn>, targets: Vec<Vec<i8>>, p: f64, rule: &str) -> PyResult<f64> {
    let ts = target_set(targets)?;
    evaluator(g.inner.n(), p, rule)?.distributional(&g.inner, &ts).map_err(py_err)
}

/// Monte-Carlo estimate of the same quantity from `samples` perturbations per target.
#[pyfunction]
#[pyo3(signature = (g, targets, samples=500, p=0.15, seed=0, rule="settle"))]
fn stochastic_fitness(
    g: PyRef<'_, PyGrn>,
    targets: Vec<Vec<i8>>,
    samples: usize,
    p: f64,
    seed: u64,
    rule: &str,
) -> PyResult<f64> {
    let ts = target_set(targets)?;
    let ev = evaluator(g.inner.n(), p, rule)?.with_samples(samples).map_err(py_err)?;
    ev.stochastic(&g.inner, &ts, &mut rng_from_seed(seed)).map_err(py_err)
}

/// The two standard targets: shared first half, opposite second half.
#[pyfunction]
fn standard_targets() -> Vec<Vec<i8>> {
    TargetSet::standard_pair().targets().iter().map(|t| t.states().to_vec()).collect()
}

/// Best attainable two-target fitness and its per-weight breakdown.
#[pyfunction]
#[pyo3(signature = (n=10, p=0.15))]
fn upper_bound<'py>(py: Python<'py>, n: usize, p: f64) -> PyResult<Bound<'py, PyDict>> {
    let b = bound_breakdown(n, p).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("bound", b.bound)?;
    out.set_item("inner", b.inner)?;
    out.set_item("unrecoverable", b.rows.iter().map(|r| r.unrecoverable).collect::<Vec<_>>())?;
    out.set_item("probability", b.rows.iter().map(|r| r.probability).collect::<Vec<_>>())?;
    Ok(out)
}

/// Newman modularity of the edge set; `modules` defaults to two halves.
#[pyfunction]
#[pyo3(signature = (g, modules=None))]
fn q_score(g: PyRef<'_, PyGrn>, modules: Option<Vec<usize>>) -> PyResult<f64> {
    let part = partition(&g.inner, modules)?;
    grnlab_core::modularity::q_score(&g.inner, &part).map_err(py_err)
}

/// Modularity normalized against `samples` random networks per edge count.
#[pyfunction]
#[pyo3(signature = (g, samples=1000, seed=0))]
fn q_normalized(g: PyRef<'_, PyGrn>, samples: usize, seed: u64) -> PyResult<f64> {
    let part = partition(&g.inner, None)?;
    let table = QNormTable::build_full(&part, samples, seed).map_err(py_err)?;
    normalized_q(&g.inner, &part, &table).map_err(py_err)
}

/// Two-sided Mann-Whitney U test (normal approximation with tie and continuity corrections).
#[pyfunction]
fn mann_whitney_u<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let t = grnlab_core::stats::mann_whitney_u(&x, &y).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("u_x", t.u_x)?;
    out.set_item("u_y", t.u_y)?;
    out.set_item("z", t.z)?;
    out.set_item("p", t.p)?;
    Ok(out)
}

/// One two-phase evolutionary run. Keyword arguments are configuration keys
/// (`generations=200, phase2_start=50, evaluation_mode="stoch", seed=3`, ...).
#[pyfunction]
#[pyo3(signature = (**settings))]
fn evolve<'py>(py: Python<'py>, settings: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let mut text = String::new();
    if let Some(settings) = settings {
        for (key, value) in settings.iter() {
            text.push_str(&format!("{} = {}\n", key.str()?, value.str()?));
        }
    }
    let config = RunConfig::parse_str(&text).map_err(py_err)?;
    let part = ModulePartition::halves(10).map_err(py_err)?;
    let qnorm = QNormTable::build_full(&part, config.qnorm_samples, config.qnorm_seed).map_err(py_err)?;
    let outcome = py.detach(|| run_two_phase(&config.evolution, &qnorm)).map_err(py_err)?;
    let out = PyDict::new(py);
    let column = |f: &dyn Fn(&grnlab_core::evolution::GenerationRecord) -> f64| -> Vec<f64> {
        outcome.records.iter().map(f).collect()
    };
    out.set_item("best_fitness", column(&|r| r.best.distributional_fitness))?;
    out.set_item("best_selection_fitness", column(&|r| r.best.selection_fitness))?;
    out.set_item("median_fitness", column(&|r| r.median_distributional))?;
    out.set_item("best_qn", column(&|r| r.best_qn))?;
    out.set_item("mean_edges", column(&|r| r.mean_edges))?;
    let best = outcome.best_genomes.last().cloned().expect("at least one generation");
    out.set_item("best", PyGrn { inner: best })?;
    Ok(out)
}

#[pymodule]
fn grnlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrn>()?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(regulate, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    m.add_function(wrap_pyfunction!(distributional_fitness, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic_fitness, m)?)?;
    m.add_function(wrap_pyfunction!(standard_targets, m)?)?;
    m.add_function(wrap_pyfunction!(upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(q_score, m)?)?;
    m.add_function(wrap_pyfunction!(q_normalized, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    Ok(())
}
