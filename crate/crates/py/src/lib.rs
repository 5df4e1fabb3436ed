//! Python bindings for the `dsgd_tails` core library.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dsgd_tails::recursion::{run_ensemble, Mode, RunConfig};
use dsgd_tails::synthdata::ProblemSpec;
use dsgd_tails::tailest::{self, MIN_SAMPLES};
use dsgd_tails::theory::{self, MomentFunction};
use dsgd_tails::topology::{self, GraphKind, MixingMatrix};

fn err(e: dsgd_tails::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kind(name: &str) -> PyResult<GraphKind> {
    name.parse::<GraphKind>().map_err(err)
}

fn mode(name: &str) -> PyResult<Mode> {
    name.parse::<Mode>().map_err(err)
}

fn rows(m: &dsgd_tails::topology::MixingMatrix) -> Vec<Vec<f64>> {
    let a = m.matrix();
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

/// Linear-regression problem with Gaussian features.
#[pyclass(name = "Problem", from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: ProblemSpec,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (d, n, eta, b = 1, sigma = 1.0, sigma_y = 1.0, batch_sizes = None))]
    fn new(
        d: usize,
        n: usize,
        eta: f64,
        b: usize,
        sigma: f64,
        sigma_y: f64,
        batch_sizes: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let mut inner = ProblemSpec::homogeneous(d, n, b, eta, sigma, sigma_y);
        if let Some(bs) = batch_sizes {
            inner.batch_sizes = bs;
        }
        inner.validate().map_err(err)?;
        Ok(PyProblem { inner })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n_nodes
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn batch_sizes(&self) -> Vec<usize> {
        self.inner.batch_sizes.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(d={}, n={}, eta={}, batch_sizes={:?})",
            self.inner.d, self.inner.n_nodes, self.inner.eta, self.inner.batch_sizes
        )
    }
}

/// Integer Laplacian of a named graph family.
#[pyfunction]
fn laplacian(kind_name: &str, n: usize) -> PyResult<Vec<Vec<i64>>> {
    let g = topology::build_graph(kind(kind_name)?, n).map_err(err)?;
    Ok(topology::integer_laplacian(&g))
}

/// Mixing matrix `I - delta L` as nested lists.
#[pyfunction]
fn mixing(kind_name: &str, n: usize, delta: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(
        &topology::build_mixing(kind(kind_name)?, n, delta).map_err(err)?,
    ))
}

/// Largest admissible `delta` for a graph family.
#[pyfunction]
fn max_delta(kind_name: &str, n: usize) -> PyResult<f64> {
    let g = topology::build_graph(kind(kind_name)?, n).map_err(err)?;
    Ok(topology::max_delta(&topology::laplacian(&g)))
}

/// Tail-index estimate of a symmetric sample.
#[pyfunction]
#[pyo3(signature = (samples, k1 = None, k2 = None))]
fn estimate_alpha(samples: Vec<f64>, k1: Option<usize>, k2: Option<usize>) -> PyResult<f64> {
    let e = match (k1, k2) {
        (Some(a), Some(b)) => tailest::estimate_alpha_scalar(&samples, a, b),
        (None, None) => tailest::estimate_alpha(&samples),
        _ => return Err(PyValueError::new_err("give both k1 and k2 or neither")),
    };
    Ok(e.map_err(err)?.alpha)
}

fn network(problem: &PyProblem, kind_name: &str, delta: f64) -> PyResult<MixingMatrix> {
    let n = problem.inner.n_nodes;
    if n == 1 || delta == 0.0 {
        return Ok(MixingMatrix::identity(n));
    }
    topology::build_mixing(kind(kind_name)?, n, delta).map_err(err)
}

/// Runs an ensemble and returns its tail-index estimate.
#[pyfunction]
#[pyo3(signature = (problem, mode_name = "de", kind_name = "complete", delta = 0.0, k = 2000, k0 = 400, runs = 400, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    mode_name: &str,
    kind_name: &str,
    delta: f64,
    k: usize,
    k0: usize,
    runs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = mode(mode_name)?;
    let w = network(problem, kind_name, delta)?;
    let cfg = RunConfig::new(problem.inner.clone(), Some(w), m, k, k0, runs, seed).map_err(err)?;
    let ens = py.detach(|| run_ensemble(&cfg));
    let out = PyDict::new(py);
    out.set_item("divergence_fraction", ens.divergence_fraction())?;
    match tailest::estimate_ensemble(&ens, MIN_SAMPLES) {
        Ok(e) => {
            out.set_item("alpha_hat", e.alpha_hat)?;
            out.set_item("per_node", e.per_node_alphas)?;
        }
        Err(_) => out.set_item("alpha_hat", py.None())?,
    }
    Ok(out)
}

/// Root of the moment bound for the given network.
#[pyfunction]
#[pyo3(signature = (problem, kind_name = "complete", delta = 0.0, n_mc = 20000, seed = 7))]
fn theory_alpha<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    kind_name: &str,
    delta: f64,
    n_mc: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let w = network(problem, kind_name, delta)?;
    let mf = MomentFunction::new(&problem.inner, &w, n_mc, seed).map_err(err)?;
    let root = py.detach(|| theory::alpha_hat_root(&mf)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("alpha", root.alpha)?;
    out.set_item("alpha_lo", root.alpha_lo)?;
    out.set_item("alpha_hi", root.alpha_hi)?;
    out.set_item("rho", root.rho_hat.value)?;
    Ok(out)
}

/// Network sign term `e(eta, N)` for homogeneous batches of size `b`.
#[pyfunction]
#[pyo3(signature = (eta, n, b = 1, sigma = 1.0))]
fn sign_term(eta: f64, n: usize, b: usize, sigma: f64) -> PyResult<f64> {
    let kit = dsgd_tails::kit::ScaledChiSquare::batch_mean(b, sigma);
    theory::e_term(eta, n, &kit).map_err(err)
}

/// Stepsize thresholds of a problem as a dictionary.
#[pyfunction]
#[pyo3(signature = (problem, eta_lo = 1e-3, eta_hi = 20.0, n_mc = 20000, seed = 7))]
fn thresholds<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    eta_lo: f64,
    eta_hi: f64,
    n_mc: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let t = theory::thresholds(&problem.inner, (eta_lo, eta_hi), n_mc, seed).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("tau", t.tau)?;
    out.set_item("tau_sign", t.tau_sign)?;
    out.set_item("eta_max", t.eta_max)?;
    out.set_item("eta_crit", t.eta_crit)?;
    out.set_item("eta_max_node", t.eta_max_node)?;
    out.set_item("eta_crit_node", t.eta_crit_node)?;
    out.set_item("case", format!("{:?}", t.case))?;
    Ok(out)
}

#[pymodule]
fn dsgd_tails_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(laplacian, m)?)?;
    m.add_function(wrap_pyfunction!(mixing, m)?)?;
    m.add_function(wrap_pyfunction!(max_delta, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(theory_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(sign_term, m)?)?;
    m.add_function(wrap_pyfunction!(thresholds, m)?)?;
    Ok(())
}
