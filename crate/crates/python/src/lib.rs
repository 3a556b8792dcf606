//! Python bindings for the discrete local FDR library.
//!
//! Data types are exposed as classes; reports and simulation results are
//! returned as plain dictionaries built from their JSON form.

use std::collections::BTreeSet;
use std::io::BufReader;
use std::str::FromStr;

use discrete_lfdr::cli::fit_family;
use discrete_lfdr::cutoff::{CutoffChoice, ScanConfig};
use discrete_lfdr::em::{self, EmConfig};
use discrete_lfdr::lfdr::{self, DecisionReport, Procedure};
use discrete_lfdr::screening;
use discrete_lfdr::sim;
use discrete_lfdr::{CountHistogram, Error, Family};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(
    discrete_lfdr_py,
    DegenerateError,
    PyValueError,
    "The data cannot identify the requested model."
);

fn to_py(e: Error) -> PyErr {
    if e.exit_code() == 3 {
        DegenerateError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse<T: FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn em_config(tol: f64, max_iter: usize) -> EmConfig {
    EmConfig {
        tol,
        max_iter,
        ..EmConfig::default()
    }
}

/// Number of positions at each mutation count.
#[pyclass(module = "discrete_lfdr_py", name = "Histogram", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHistogram(CountHistogram);

#[pymethods]
impl PyHistogram {
    /// Tally one count per position.
    #[staticmethod]
    fn from_counts(counts: Vec<u64>) -> PyResult<Self> {
        CountHistogram::from_positions(&counts).map(Self).map_err(to_py)
    }

    /// Build from `(count, n_positions)` pairs.
    #[staticmethod]
    fn from_pairs(pairs: Vec<(u64, u64)>) -> PyResult<Self> {
        CountHistogram::from_pairs(pairs).map(Self).map_err(to_py)
    }

    /// Read a `count, n_positions` or `position, count` TSV file.
    #[staticmethod]
    fn read_tsv(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| to_py(Error::Io(e)))?;
        CountHistogram::read_tsv(BufReader::new(file)).map(Self).map_err(to_py)
    }

    #[getter]
    fn total(&self) -> u64 {
        self.0.total()
    }

    #[getter]
    fn max_count(&self) -> u64 {
        self.0.max_count()
    }

    /// `(n, N - n)`: positions at or below the cut-off and above it.
    fn null_mass_split(&self, cutoff: u64) -> PyResult<(u64, u64)> {
        self.0.null_mass_split(cutoff).map_err(to_py)
    }

    /// `(count, n_positions)` pairs in increasing count order.
    fn pairs(&self) -> Vec<(u64, u64)> {
        self.0.iter().collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Histogram(total={}, max_count={}, support={})",
            self.0.total(),
            self.0.max_count(),
            self.0.support_len()
        )
    }
}

/// Null distribution parameters.
#[pyclass(module = "discrete_lfdr_py", name = "NullParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNullParams(discrete_lfdr::NullParams);

#[pymethods]
impl PyNullParams {
    #[new]
    #[pyo3(signature = (family, eta = 0.0, lam = 1.0, theta = 0.0))]
    fn new(family: &str, eta: f64, lam: f64, theta: f64) -> PyResult<Self> {
        discrete_lfdr::NullParams::new(parse(family)?, eta, lam, theta)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn family(&self) -> String {
        self.0.family.to_string()
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }

    #[getter(lam)]
    fn lambda(&self) -> f64 {
        self.0.lambda
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    fn pmf(&self, j: u64) -> f64 {
        self.0.pmf(j)
    }

    fn ln_pmf(&self, j: u64) -> f64 {
        self.0.ln_pmf(j)
    }

    fn __repr__(&self) -> String {
        format!("NullParams({})", self.0)
    }
}

/// Fitted null with its cut-off and null proportion.
#[pyclass(module = "discrete_lfdr_py", name = "NullFit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNullFit(em::NullFit);

#[pymethods]
impl PyNullFit {
    #[getter]
    fn params(&self) -> PyNullParams {
        PyNullParams(self.0.params)
    }

    #[getter]
    fn cutoff(&self) -> u64 {
        self.0.cutoff
    }

    #[getter]
    fn pi0(&self) -> f64 {
        self.0.pi0
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.0.loglik()
    }

    #[getter]
    fn loglik_trace(&self) -> Vec<f64> {
        self.0.loglik_trace.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    /// Screening threshold for `n` positions with largest count `k`.
    fn d_n(&self, n: u64, k: u64) -> PyResult<u64> {
        screening::d_n(&self.0, n, self.0.cutoff, k)
            .map(|t| t.d_n)
            .map_err(to_py)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "NullFit({}, C={}, pi0={:.4}, converged={})",
            self.0.params, self.0.cutoff, self.0.pi0, self.0.converged
        )
    }
}

/// Fit `family` with the null sample below a fixed cut-off.
#[pyfunction]
#[pyo3(signature = (family, hist, cutoff, tol = 1e-8, max_iter = 500))]
fn fit_null(
    family: &str,
    hist: &PyHistogram,
    cutoff: u64,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyNullFit> {
    let family: Family = parse(family)?;
    em::fit_null(family, &hist.0, cutoff, &em_config(tol, max_iter))
        .map(PyNullFit)
        .map_err(to_py)
}

/// Choose the cut-off (`"c1"`, `"c2"` or `"fixed:<C>"`) and fit.
/// Returns the fit and, for scans, a list of per-candidate dictionaries.
#[pyfunction]
#[pyo3(signature = (family, hist, cutoff = "c1", tol = 1e-8, max_iter = 500))]
fn fit<'py>(
    py: Python<'py>,
    family: &str,
    hist: &PyHistogram,
    cutoff: &str,
    tol: f64,
    max_iter: usize,
) -> PyResult<(PyNullFit, Bound<'py, PyAny>)> {
    let family: Family = parse(family)?;
    let choice: CutoffChoice = parse(cutoff)?;
    let cfg = ScanConfig {
        em: em_config(tol, max_iter),
        ..ScanConfig::default()
    };
    let (fit, scan) = fit_family(family, &hist.0, choice, &cfg).map_err(to_py)?;
    let scan = match scan {
        Some(s) => json_to_py(py, &s.per_nu)?,
        None => py.None().into_bound(py),
    };
    Ok((PyNullFit(fit), scan))
}

/// Local FDR `π0 f0(j) / f(j)` at an observed count.
#[pyfunction]
fn local_fdr(fit: &PyNullFit, hist: &PyHistogram, j: u64) -> PyResult<f64> {
    lfdr::local_fdr(&fit.0, &hist.0, j).map_err(to_py)
}

/// Rejected count values under `procedure`.
#[pyfunction]
#[pyo3(signature = (fit, hist, alpha = 0.05, procedure = "two-stage"))]
fn decide(fit: &PyNullFit, hist: &PyHistogram, alpha: f64, procedure: &str) -> PyResult<BTreeSet<u64>> {
    let procedure: Procedure = parse(procedure)?;
    let threshold = if fit.0.cutoff < hist.0.max_count() {
        Some(screening::d_n(&fit.0, hist.0.total(), fit.0.cutoff, hist.0.max_count()).map_err(to_py)?)
    } else {
        None
    };
    Ok(lfdr::decide(procedure, &fit.0, &hist.0, alpha, threshold.as_ref()))
}

/// Per-count table and rejections of every procedure, as a dictionary.
#[pyfunction]
#[pyo3(signature = (fit, hist, alpha = 0.05))]
fn report<'py>(
    py: Python<'py>,
    fit: &PyNullFit,
    hist: &PyHistogram,
    alpha: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let rep = DecisionReport::build(&fit.0, &hist.0, alpha, &Procedure::ALL).map_err(to_py)?;
    json_to_py(py, &rep)
}

/// Run a simulation design given in the `key = value` format. Returns the
/// summary rows as a list of dictionaries.
#[pyfunction]
#[pyo3(signature = (design, reps = None, seed = None))]
fn simulate<'py>(
    py: Python<'py>,
    design: &str,
    reps: Option<u64>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut d = sim::SimDesign::parse(design.as_bytes()).map_err(to_py)?;
    if let Some(r) = reps {
        d.reps = r;
    }
    if let Some(s) = seed {
        d.seed = s;
    }
    d.validate().map_err(to_py)?;
    let res = py.detach(|| sim::run(&d)).map_err(to_py)?;
    json_to_py(py, &res.rows)
}

/// Draw one replication of a design: `(histogram, counts, is_null)`.
#[pyfunction]
#[pyo3(signature = (design, rep = 0))]
fn generate(design: &str, rep: u64) -> PyResult<(PyHistogram, Vec<u64>, Vec<bool>)> {
    let d = sim::SimDesign::parse(design.as_bytes()).map_err(to_py)?;
    d.validate().map_err(to_py)?;
    let r = sim::generate(&d, rep).map_err(to_py)?;
    Ok((PyHistogram(r.histogram), r.counts, r.is_null))
}

#[pymodule]
fn discrete_lfdr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyNullParams>()?;
    m.add_class::<PyNullFit>()?;
    m.add("DegenerateError", m.py().get_type::<DegenerateError>())?;
    m.add_function(wrap_pyfunction!(fit_null, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(local_fdr, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
