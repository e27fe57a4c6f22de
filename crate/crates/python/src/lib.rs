//! Python bindings. Vectors cross the boundary as lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use snspp::baselines::{self, BaselineConfig, BaselineMethod};
use snspp::data::{self, Dataset, SyntheticSpec};
use snspp::diagnostics::{self, Recorder, TraceRecord};
use snspp::driver::{self, Sampling, Schedule, SnapshotRule, SnsppConfig, ToleranceSchedule};
use snspp::linalg::{DenseRows, Design};
use snspp::losses::LossFamily;
use snspp::monitor::{RunOutcome, RunStatus};
use snspp::regularizers::Regularizer;
use snspp::subsolver::{self, NewtonParams, SubproblemContext};
use snspp::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (Error::LineSearch { .. } | Error::NewtonMaxIter { .. } | Error::Evaluation { .. }) => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

fn loss_family(name: &str, nu: f64) -> PyResult<LossFamily> {
    match name {
        "logistic" => Ok(LossFamily::Logistic),
        "squared" => Ok(LossFamily::Squared),
        "student_t" => Ok(LossFamily::StudentT { nu }),
        other => Err(PyValueError::new_err(format!("unknown loss `{other}`"))),
    }
}

fn regularizer(l1: f64, ridge: f64) -> Regularizer {
    match (l1, ridge) {
        (l, r) if l == 0.0 && r == 0.0 => Regularizer::Zero,
        (l, 0.0) => Regularizer::l1(l),
        (lambda, ridge) => Regularizer::L1PlusRidge { lambda, ridge },
    }
}

fn sampling(name: &str) -> PyResult<Sampling> {
    match name {
        "with_replacement" => Ok(Sampling::WithReplacement),
        "without_replacement" => Ok(Sampling::WithoutReplacement),
        other => Err(PyValueError::new_err(format!("unknown sampling `{other}`"))),
    }
}

fn status_name(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::Stopped => "stopped".into(),
        RunStatus::BudgetExhausted => "budget_exhausted".into(),
        RunStatus::Diverged => "diverged".into(),
        RunStatus::Failed(m) => format!("failed: {m}"),
    }
}

fn record_dict<'py>(py: Python<'py>, r: &TraceRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("s", r.s)?;
    d.set_item("k", r.k)?;
    d.set_item("grad_evals", r.grad_evals)?;
    d.set_item("wall_time_s", r.wall_time_s)?;
    d.set_item("objective", r.objective)?;
    d.set_item("fnat_norm", r.fnat_norm)?;
    d.set_item("inner_newton_iters", r.inner_newton_iters)?;
    d.set_item("inner_residual", r.inner_residual)?;
    Ok(d)
}

fn outcome_dict<'py>(py: Python<'py>, out: &RunOutcome, trace: &[TraceRecord]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("x", &out.x)?;
    d.set_item("x_uniform", &out.x_uniform)?;
    d.set_item("status", status_name(&out.status))?;
    d.set_item("grad_evals", out.grad_evals)?;
    d.set_item("outer_iters", out.outer_iters)?;
    d.set_item("newton_iters", out.newton_iters)?;
    d.set_item("retries", out.retries)?;
    d.set_item("final_alpha", out.final_alpha)?;
    let rows = trace.iter().map(|r| record_dict(py, r)).collect::<PyResult<Vec<_>>>()?;
    d.set_item("trace", rows)?;
    Ok(d)
}

/// Composite objective `(1/N) Σ f_i(A_i x) + φ(x)`.
#[pyclass(name = "Problem", module = "pysnspp", frozen)]
struct PyProblem {
    inner: snspp::Problem,
}

impl PyProblem {
    fn from_design(design: Design, targets: Vec<f64>, loss: &str, nu: f64, l1: f64, ridge: f64) -> PyResult<Self> {
        let reg = regularizer(l1, ridge);
        let inner = match loss_family(loss, nu)? {
            LossFamily::Logistic => snspp::Problem::logistic(design, &targets, reg),
            fam => snspp::Problem::from_rows(design, targets, fam, reg),
        }
        .map_err(py_err)?;
        Ok(PyProblem { inner })
    }

    fn from_dataset(ds: Dataset, loss: &str, nu: f64, l1: f64, ridge: f64) -> PyResult<Self> {
        Self::from_design(ds.features, ds.targets, loss, nu, l1, ridge)
    }

    fn check_dim(&self, x: &[f64]) -> PyResult<()> {
        self.inner.check_point(x).map_err(py_err)
    }
}

#[pymethods]
impl PyProblem {
    /// Dense rows with one target per row. Logistic targets must be ±1.
    #[new]
    #[pyo3(signature = (rows, targets, loss = "squared", nu = 1.0, l1 = 0.0, ridge = 0.0))]
    fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>, loss: &str, nu: f64, l1: f64, ridge: f64) -> PyResult<Self> {
        let design = Design::Dense(DenseRows::from_rows(&rows).map_err(py_err)?);
        Self::from_design(design, targets, loss, nu, l1, ridge)
    }

    /// Load a sparse `label index:value ...` file.
    #[staticmethod]
    #[pyo3(signature = (path, loss = "logistic", nu = 1.0, l1 = 0.0, ridge = 0.0))]
    fn from_sparse_text(path: PathBuf, loss: &str, nu: f64, l1: f64, ridge: f64) -> PyResult<Self> {
        let ds = data::load_sparse_text(&path).map_err(py_err)?;
        Self::from_dataset(ds, loss, nu, l1, ridge)
    }

    /// Synthetic heavy-tailed regression; returns `(problem, x_true)`.
    #[staticmethod]
    #[pyo3(signature = (n, n_samples, nnz, seed = 0, loss = "student_t", nu = 1.0, l1 = 0.0, ridge = 0.0, noise_scale = 0.1))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n: usize,
        n_samples: usize,
        nnz: usize,
        seed: u64,
        loss: &str,
        nu: f64,
        l1: f64,
        ridge: f64,
        noise_scale: f64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let spec = SyntheticSpec {
            n,
            n_samples,
            nnz,
            noise_scale,
            ..SyntheticSpec::default()
        };
        let (ds, x_true) = data::synth_student_t(&spec, seed).map_err(py_err)?;
        Ok((Self::from_dataset(ds, loss, nu, l1, ridge)?, x_true))
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        self.inner.objective(&x).map_err(py_err)
    }

    fn smooth_value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        self.inner.smooth_value(&x).map_err(py_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_dim(&x)?;
        self.inner.full_gradient(&x).map_err(py_err)
    }

    /// `x - prox_{αφ}(x - α∇f(x))`.
    #[pyo3(signature = (x, alpha = 1.0))]
    fn fnat(&self, x: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
        self.check_dim(&x)?;
        diagnostics::fnat(&self.inner, &x, alpha).map_err(py_err)
    }

    fn fnat_norm(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_dim(&x)?;
        diagnostics::fnat_norm(&self.inner, &x).map_err(py_err)
    }

    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.constants();
        let d = PyDict::new(py);
        d.set_item("l_smooth", c.l_smooth)?;
        d.set_item("l_bar", c.l_bar)?;
        d.set_item("l_avg", c.l_avg)?;
        d.set_item("a_bar", c.a_bar)?;
        d.set_item("m_bar", c.m_bar)?;
        d.set_item("mu_star", c.mu_star)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(loss={}, n_samples={}, dim={})",
            self.inner.loss().name(),
            self.inner.n_samples(),
            self.inner.dim()
        )
    }
}

/// One SNSPP run. Returns a dict with `x`, `status`, counters and the trace.
#[pyfunction]
#[pyo3(signature = (
    problem, alpha, batch, x0 = None, inner_len = 10, outer_iters = 50, max_epochs = None,
    eps_sub = 1e-3, adaptive_tolerance = false, sampling = "with_replacement", average_snapshot = false,
    record_inner = false, seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn snspp_run<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    alpha: f64,
    batch: usize,
    x0: Option<Vec<f64>>,
    inner_len: usize,
    outer_iters: usize,
    max_epochs: Option<f64>,
    eps_sub: f64,
    adaptive_tolerance: bool,
    sampling: &str,
    average_snapshot: bool,
    record_inner: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = &problem.inner;
    let cfg = SnsppConfig {
        alpha: Schedule::Constant(alpha),
        batch: Schedule::Constant(batch),
        inner_len,
        outer_iters,
        max_epochs,
        tolerance: if adaptive_tolerance {
            ToleranceSchedule::adaptive_default()
        } else {
            ToleranceSchedule::Constant
        },
        snapshot: if average_snapshot {
            SnapshotRule::Average
        } else {
            SnapshotRule::Last
        },
        sampling: self::sampling(sampling)?,
        newton: NewtonParams {
            eps_sub,
            ..NewtonParams::default()
        },
        record_inner,
        seed,
        ..SnsppConfig::default()
    };
    let x0 = x0.unwrap_or_else(|| vec![0.0; p.dim()]);
    let (out, trace) = py
        .detach(|| {
            let mut rec = Recorder::new(p, "py", "snspp");
            driver::snspp_run(p, &cfg, &x0, &mut rec).map(|o| (o, rec.records))
        })
        .map_err(py_err)?;
    outcome_dict(py, &out, &trace)
}

/// Proximal SVRG, SAGA, AdaGrad or gradient descent.
#[pyfunction]
#[pyo3(signature = (
    problem, method, alpha, batch = 1, x0 = None, inner_len = None, outer_iters = 50, max_epochs = None,
    sampling = "with_replacement", seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn baseline_run<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    method: &str,
    alpha: f64,
    batch: usize,
    x0: Option<Vec<f64>>,
    inner_len: Option<usize>,
    outer_iters: usize,
    max_epochs: Option<f64>,
    sampling: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let method = match method {
        "svrg" => BaselineMethod::Svrg,
        "saga" => BaselineMethod::Saga,
        "adagrad" => BaselineMethod::Adagrad,
        "prox_gd" => BaselineMethod::ProxGd,
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    };
    let p = &problem.inner;
    let cfg = BaselineConfig {
        alpha,
        batch,
        inner_len,
        outer_iters,
        max_epochs,
        sampling: self::sampling(sampling)?,
        seed,
        ..BaselineConfig::default()
    };
    let x0 = x0.unwrap_or_else(|| vec![0.0; p.dim()]);
    let (out, trace) = py
        .detach(|| {
            let mut rec = Recorder::new(p, "py", method.name());
            baselines::run_baseline(method, p, &cfg, &x0, &mut rec).map(|o| (o, rec.records))
        })
        .map_err(py_err)?;
    outcome_dict(py, &out, &trace)
}

/// Long proximal gradient run for ψ*.
#[pyfunction]
#[pyo3(signature = (problem, tol = 1e-10, max_iter = 100_000, step = None))]
fn estimate_optimum<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    tol: f64,
    max_iter: usize,
    step: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = &problem.inner;
    let est = py
        .detach(|| baselines::estimate_optimum(p, &vec![0.0; p.dim()], step, tol, max_iter))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("x", est.x)?;
    d.set_item("objective", est.objective)?;
    d.set_item("fnat_norm", est.fnat_norm)?;
    d.set_item("iterations", est.iterations)?;
    d.set_item("converged", est.converged)?;
    Ok(d)
}

/// Solve one proximal subproblem with the semismooth Newton method.
#[pyfunction]
#[pyo3(signature = (problem, x, shift, alpha, batch, eps_sub = 1e-8))]
fn solve_subproblem<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    x: Vec<f64>,
    shift: Vec<f64>,
    alpha: f64,
    batch: Vec<usize>,
    eps_sub: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let ctx = SubproblemContext::new(&problem.inner, &x, &shift, alpha, &batch).map_err(py_err)?;
    let params = NewtonParams {
        eps_sub,
        ..NewtonParams::default()
    };
    let sol = subsolver::solve_subproblem(&ctx, &params, ctx.cold_start()).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("xi", sol.xi)?;
    d.set_item("x_plus", sol.x_plus)?;
    d.set_item("iterations", sol.stats.iterations)?;
    d.set_item("residual_history", sol.stats.residual_history)?;
    Ok(d)
}

/// Soft-thresholding prox of `α(λ|·| + (ridge/2)|·|²)`, coordinatewise.
#[pyfunction]
#[pyo3(signature = (x, alpha, l1, ridge = 0.0))]
fn prox(x: Vec<f64>, alpha: f64, l1: f64, ridge: f64) -> Vec<f64> {
    regularizer(l1, ridge).prox(&x, alpha)
}

#[pymodule]
pub fn pysnspp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(snspp_run, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_run, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(solve_subproblem, m)?)?;
    m.add_function(wrap_pyfunction!(prox, m)?)?;
    Ok(())
}
