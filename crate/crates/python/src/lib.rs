//! Python bindings: the adaptive-β primitives, a stateful optimizer wrapper,
//! the synthetic problems and the seeded experiment harness.

use std::collections::HashMap;

use maxva_lab::harness::{run_experiment as run_core, ExperimentSpec, ProblemSpec};
use maxva_lab::maxva as core_maxva;
use maxva_lab::optimizers::step as core_step;
use maxva_lab::problems::{self, FiniteSampleProblem, NQMProblem, NqmInit};
use maxva_lab::{Algorithm, CoordVector, OptimizerConfig, OptimizerState};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: maxva_lab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(xs: Vec<f64>) -> PyResult<CoordVector> {
    CoordVector::new(xs).map_err(err)
}

#[pyclass(name = "BetaBounds", module = "maxva", skip_from_py_object)]
#[derive(Clone)]
struct PyBetaBounds {
    inner: core_maxva::BetaBounds,
}

#[pymethods]
impl PyBetaBounds {
    #[new]
    #[pyo3(signature = (lower=0.5, upper=0.999, beta_one=None, delta=None))]
    fn new(lower: f64, upper: f64, beta_one: Option<f64>, delta: Option<f64>) -> PyResult<Self> {
        let mut b = core_maxva::BetaBounds::new(lower, upper).map_err(err)?;
        if let Some(x) = beta_one {
            b = b.with_beta_one(x).map_err(err)?;
        }
        if let Some(x) = delta {
            b = b.with_delta(x).map_err(err)?;
        }
        Ok(Self { inner: b })
    }

    #[getter]
    fn lower(&self) -> f64 {
        self.inner.beta_lower
    }

    #[getter]
    fn upper(&self) -> f64 {
        self.inner.beta_upper
    }

    #[getter]
    fn beta_one(&self) -> f64 {
        self.inner.beta_one
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    fn __repr__(&self) -> String {
        format!(
            "BetaBounds(lower={}, upper={}, beta_one={}, delta={:e})",
            self.inner.beta_lower, self.inner.beta_upper, self.inner.beta_one, self.inner.delta
        )
    }
}

/// Accumulators `(ũ, ṽ, w)` and step counter of the adaptive average.
#[pyclass(name = "MaxVAState", module = "maxva", skip_from_py_object)]
#[derive(Clone)]
struct PyMaxVAState {
    inner: core_maxva::MaxVAState,
}

#[pymethods]
impl PyMaxVAState {
    #[new]
    fn new(dim: usize) -> Self {
        Self {
            inner: core_maxva::MaxVAState::new(dim),
        }
    }

    #[getter]
    fn u_tilde(&self) -> Vec<f64> {
        self.inner.u_tilde.as_slice().to_vec()
    }

    #[getter]
    fn v_tilde(&self) -> Vec<f64> {
        self.inner.v_tilde.as_slice().to_vec()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.inner.w.as_slice().to_vec()
    }

    #[getter]
    fn t(&self) -> u64 {
        self.inner.t
    }

    /// `(u, v, sigma_sq)` with `sigma_sq` floored at zero.
    fn bias_corrected(&self) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let m = core_maxva::bias_corrected(&self.inner).map_err(err)?;
        Ok((m.u.into_vec(), m.v.into_vec(), m.sigma_sq.into_vec()))
    }

    fn __repr__(&self) -> String {
        format!("MaxVAState(dim={}, t={})", self.inner.dim(), self.inner.t)
    }
}

#[pyfunction]
#[pyo3(signature = (g, state, delta=1e-16))]
fn compute_beta_raw(g: Vec<f64>, state: &PyMaxVAState, delta: f64) -> PyResult<Vec<f64>> {
    Ok(core_maxva::compute_beta_raw(&vector(g)?, &state.inner, delta)
        .map_err(err)?
        .into_vec())
}

#[pyfunction]
fn clip_beta(beta_raw: Vec<f64>, bounds: &PyBetaBounds) -> PyResult<Vec<f64>> {
    Ok(core_maxva::clip_beta(&vector(beta_raw)?, &bounds.inner).into_vec())
}

#[pyfunction]
fn update_moments(state: &PyMaxVAState, g: Vec<f64>, beta: Vec<f64>) -> PyResult<PyMaxVAState> {
    let inner = core_maxva::update_moments(&state.inner, &vector(g)?, &vector(beta)?).map_err(err)?;
    Ok(PyMaxVAState { inner })
}

/// Returns `(beta, next_state)`.
#[pyfunction]
fn maxva_step_beta(state: &PyMaxVAState, g: Vec<f64>, bounds: &PyBetaBounds) -> PyResult<(Vec<f64>, PyMaxVAState)> {
    let (beta, inner) = core_maxva::maxva_step_beta(&state.inner, &vector(g)?, &bounds.inner).map_err(err)?;
    Ok((beta.into_vec(), PyMaxVAState { inner }))
}

fn parse_algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse::<Algorithm>().map_err(err)
}

/// Stateful wrapper over the pure step rule. State is created on the first
/// `step` from the parameter length.
#[pyclass(name = "Optimizer", module = "maxva", skip_from_py_object)]
struct PyOptimizer {
    config: OptimizerConfig,
    state: Option<OptimizerState>,
    last_beta: Vec<f64>,
    last_step_size: f64,
}

#[pymethods]
impl PyOptimizer {
    #[new]
    #[pyo3(signature = (
        algorithm, eta=1e-3, *, alpha=None, beta=None, bounds=None, epsilon=None,
        weight_decay=0.0, amsgrad=false, adabound_gamma=None, adabound_final_lr=None, momentum=None
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        algorithm: &str,
        eta: f64,
        alpha: Option<f64>,
        beta: Option<f64>,
        bounds: Option<PyRef<'_, PyBetaBounds>>,
        epsilon: Option<f64>,
        weight_decay: f64,
        amsgrad: bool,
        adabound_gamma: Option<f64>,
        adabound_final_lr: Option<f64>,
        momentum: Option<f64>,
    ) -> PyResult<Self> {
        let alg = parse_algorithm(algorithm)?;
        let mut c = OptimizerConfig::new(alg).with_eta(eta).with_weight_decay(weight_decay);
        if let Some(x) = alpha {
            c = c.with_alpha(x);
        }
        if let Some(x) = beta {
            c = c.with_beta(x);
        }
        if let Some(b) = bounds {
            c = c.with_bounds(b.inner.clone());
        }
        if let Some(x) = epsilon {
            c = c.with_epsilon(x);
        }
        if amsgrad {
            c = c.with_amsgrad(true);
        }
        if adabound_gamma.is_some() || adabound_final_lr.is_some() {
            let gamma = adabound_gamma.unwrap_or(c.adabound_gamma);
            let final_lr = adabound_final_lr.unwrap_or(c.adabound_final_lr);
            c = c.with_adabound(gamma, final_lr);
        }
        if let Some(x) = momentum {
            c = c.with_momentum(x);
        }
        c.validate().map_err(err)?;
        Ok(Self {
            config: c,
            state: None,
            last_beta: Vec::new(),
            last_step_size: f64::NAN,
        })
    }

    /// One update; returns the new parameters.
    fn step(&mut self, theta: Vec<f64>, grad: Vec<f64>) -> PyResult<Vec<f64>> {
        let theta = vector(theta)?;
        let state = match self.state.take() {
            Some(s) => s,
            None => OptimizerState::new(&self.config, theta.len()),
        };
        let outcome = core_step(&theta, &vector(grad)?, &state, &self.config);
        let (next, st, report) = match outcome {
            Ok(x) => x,
            Err(e) => {
                self.state = Some(state);
                return Err(err(e));
            }
        };
        self.state = Some(st);
        self.last_beta = report.beta_used.into_vec();
        self.last_step_size = report.step_size_avg;
        Ok(next.into_vec())
    }

    fn reset(&mut self) {
        self.state = None;
        self.last_beta.clear();
        self.last_step_size = f64::NAN;
    }

    #[getter]
    fn t(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.t)
    }

    #[getter]
    fn algorithm(&self) -> String {
        self.config.algorithm.to_string()
    }

    /// β applied per coordinate by the last step.
    #[getter]
    fn last_beta(&self) -> Vec<f64> {
        self.last_beta.clone()
    }

    /// Mean absolute update of the last step.
    #[getter]
    fn last_step_size(&self) -> f64 {
        self.last_step_size
    }

    fn __repr__(&self) -> String {
        format!("Optimizer({:?}, t={})", self.config.algorithm.to_string(), self.t())
    }
}

#[pyfunction]
fn finite_sample_grad(theta: f64, i: usize) -> PyResult<f64> {
    problems::finite_sample_grad(theta, i).map_err(err)
}

#[pyfunction]
fn finite_sample_full_grad(theta: f64) -> f64 {
    problems::finite_sample_full_grad(theta)
}

#[pyfunction]
fn finite_sample_loss(theta: f64) -> f64 {
    problems::finite_sample_loss(theta)
}

/// `g_i = h_i (θ_i − σ ε_i)` for explicit noise `eps`.
#[pyfunction]
fn nqm_grad(theta: Vec<f64>, h: Vec<f64>, sigma: f64, eps: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = NQMProblem::new(vector(h)?, sigma).map_err(err)?;
    Ok(problems::nqm_grad_with_noise(&vector(theta)?, &p, &vector(eps)?)
        .map_err(err)?
        .into_vec())
}

/// `(excess, expected_loss)`.
#[pyfunction]
fn nqm_risk(theta: Vec<f64>, h: Vec<f64>, sigma: f64) -> PyResult<(f64, f64)> {
    let p = NQMProblem::new(vector(h)?, sigma).map_err(err)?;
    problems::nqm_risk(&vector(theta)?, &p).map_err(err)
}

/// Runs `runs` seeded runs and returns the per-step aggregate as lists keyed
/// like the CLI's CSV columns, plus final-step summaries.
#[pyfunction]
#[pyo3(signature = (
    problem, optimizer, *, runs=100, steps=1000, seed=0, record_every=1,
    theta0=1.0, h=None, sigma=1.0, theta_init=None
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    problem: &str,
    optimizer: &PyOptimizer,
    runs: usize,
    steps: u64,
    seed: u64,
    record_every: u64,
    theta0: f64,
    h: Option<Vec<f64>>,
    sigma: f64,
    theta_init: Option<Vec<f64>>,
) -> PyResult<HashMap<String, Py<PyAny>>> {
    let problem = match problem {
        "counterexample" => ProblemSpec::FiniteSample(FiniteSampleProblem { theta0 }),
        "nqm" => {
            let mut p = NQMProblem::new(vector(h.unwrap_or_else(|| vec![1.0, 0.1]))?, sigma).map_err(err)?;
            if let Some(t) = theta_init {
                p = p.with_init(NqmInit::Fixed(vector(t)?));
            }
            ProblemSpec::Nqm(p)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown problem '{other}' (expected counterexample or nqm)"
            )))
        }
    };
    let spec = ExperimentSpec::new(problem, optimizer.config.clone())
        .with_runs(runs)
        .with_horizon(steps)
        .with_seed(seed)
        .with_record_every(record_every);
    let result = py.detach(|| run_core(&spec)).map_err(err)?;

    let rows = &result.aggregate.rows;
    let col = |f: &dyn Fn(&maxva_lab::harness::AggregateRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let mut out: HashMap<String, Py<PyAny>> = HashMap::new();
    let mut put = |k: &str, v: Bound<'_, PyAny>| {
        out.insert(k.to_string(), v.unbind());
    };
    put("step", rows.iter().map(|r| r.step).collect::<Vec<u64>>().into_pyobject(py)?.into_any());
    put("median_loss", col(&|r| r.loss.median).into_pyobject(py)?.into_any());
    put("stderr_loss", col(&|r| r.loss.stderr).into_pyobject(py)?.into_any());
    put("median_s1", col(&|r| r.s1.median).into_pyobject(py)?.into_any());
    put("median_s2", col(&|r| r.s2.median).into_pyobject(py)?.into_any());
    put("median_step_size", col(&|r| r.step_size.median).into_pyobject(py)?.into_any());
    put("beta_mean", col(&|r| r.beta_mean.median).into_pyobject(py)?.into_any());
    put("beta_min", col(&|r| r.beta_min.min).into_pyobject(py)?.into_any());
    put("beta_max", col(&|r| r.beta_max.max).into_pyobject(py)?.into_any());
    put(
        "n_failed",
        rows.iter().map(|r| r.n_failed).collect::<Vec<usize>>().into_pyobject(py)?.into_any(),
    );
    put("final_losses", result.final_losses().into_pyobject(py)?.into_any());
    put(
        "final_abs_theta",
        result
            .runs
            .iter()
            .map(|r| r.final_abs_theta())
            .collect::<Vec<f64>>()
            .into_pyobject(py)?
            .into_any(),
    );
    put("failed_runs", result.n_failed().into_pyobject(py)?.into_any());
    Ok(out)
}

#[pymodule]
fn maxva(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBetaBounds>()?;
    m.add_class::<PyMaxVAState>()?;
    m.add_class::<PyOptimizer>()?;
    m.add_function(wrap_pyfunction!(compute_beta_raw, m)?)?;
    m.add_function(wrap_pyfunction!(clip_beta, m)?)?;
    m.add_function(wrap_pyfunction!(update_moments, m)?)?;
    m.add_function(wrap_pyfunction!(maxva_step_beta, m)?)?;
    m.add_function(wrap_pyfunction!(finite_sample_grad, m)?)?;
    m.add_function(wrap_pyfunction!(finite_sample_full_grad, m)?)?;
    m.add_function(wrap_pyfunction!(finite_sample_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nqm_grad, m)?)?;
    m.add_function(wrap_pyfunction!(nqm_risk, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add(
        "ALGORITHMS",
        Algorithm::ALL.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
