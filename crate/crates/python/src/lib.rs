//! Python module `g2fit`.

use std::path::PathBuf;

use g2fit_core::bench::{crb_empirical_check, integration_time_ladder};
use g2fit_core::io::{format_histogram, parse_histogram, read_histogram, write_histogram};
use g2fit_core::optim::{multistart_least_squares, multistart_maximize};
use g2fit_core::{fixtures, BackgroundMode, Error, FitProblem, GuessStrategy, MultiStartPlan, ObjectiveConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(m) => PyOSError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn background(fixed: Option<f64>) -> BackgroundMode {
    fixed.map_or(BackgroundMode::Free, BackgroundMode::Fixed)
}

fn objective_config(lam: f64) -> ObjectiveConfig {
    if lam == 0.0 {
        ObjectiveConfig::mle()
    } else {
        ObjectiveConfig::map(lam)
    }
}

#[pyclass(name = "DelayGrid", module = "g2fit", from_py_object)]
#[derive(Clone)]
pub struct PyDelayGrid {
    inner: g2fit_core::DelayGrid,
}

#[pymethods]
impl PyDelayGrid {
    #[new]
    #[pyo3(signature = (tau, bin_width=None))]
    fn new(tau: Vec<f64>, bin_width: Option<f64>) -> PyResult<Self> {
        let inner = match bin_width {
            Some(w) => g2fit_core::DelayGrid::with_bin_width(tau, w),
            None => g2fit_core::DelayGrid::new(tau),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(start: f64, bin_width: f64, bins: usize) -> PyResult<Self> {
        Ok(Self {
            inner: g2fit_core::DelayGrid::uniform(start, bin_width, bins).map_err(err)?,
        })
    }

    #[getter]
    fn tau(&self) -> Vec<f64> {
        self.inner.tau().to_vec()
    }

    #[getter]
    fn bin_width(&self) -> f64 {
        self.inner.bin_width()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("DelayGrid(bins={}, bin_width={})", self.inner.len(), self.inner.bin_width())
    }
}

#[pyclass(name = "Histogram", module = "g2fit", from_py_object)]
#[derive(Clone)]
pub struct PyHistogram {
    inner: g2fit_core::Histogram,
}

#[pymethods]
impl PyHistogram {
    #[new]
    #[pyo3(signature = (grid, counts, unit=None))]
    fn new(grid: &PyDelayGrid, counts: Vec<u64>, unit: Option<String>) -> PyResult<Self> {
        let inner = g2fit_core::Histogram::new(grid.inner.clone(), counts).map_err(err)?.with_unit(unit);
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_histogram(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_histogram(text).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_histogram(&path, &self.inner).map_err(err)
    }

    fn to_csv(&self) -> String {
        format_histogram(&self.inner)
    }

    #[getter]
    fn grid(&self) -> PyDelayGrid {
        PyDelayGrid {
            inner: self.inner.grid().clone(),
        }
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn unit(&self) -> Option<String> {
        self.inner.unit().map(str::to_string)
    }

    #[getter]
    fn total_photons(&self) -> u64 {
        self.inner.total_photons()
    }

    #[getter]
    fn max_count(&self) -> u64 {
        self.inner.max_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Histogram(bins={}, photons={})", self.inner.len(), self.inner.total_photons())
    }
}

#[pyclass(name = "ModelSpec", module = "g2fit", from_py_object)]
#[derive(Clone)]
pub struct PyModelSpec {
    inner: g2fit_core::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// Pulsed antibunched emitter with default bounds for `grid`.
    #[staticmethod]
    #[pyo3(signature = (grid, max_count, fixed_background=None))]
    fn pulsed(grid: &PyDelayGrid, max_count: u64, fixed_background: Option<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: g2fit_core::ModelSpec::pulsed(&grid.inner, max_count, background(fixed_background)).map_err(err)?,
        })
    }

    /// Background plus a sum of centered Gaussians.
    #[staticmethod]
    #[pyo3(signature = (grid, max_count, num_gaussians=1, fixed_background=None))]
    fn thermal(grid: &PyDelayGrid, max_count: u64, num_gaussians: usize, fixed_background: Option<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: g2fit_core::ModelSpec::thermal(&grid.inner, max_count, num_gaussians, background(fixed_background))
                .map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json_from_str(text)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        g2fit_core::io::to_json_pretty(&self.inner).map_err(err)
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn lower(&self) -> Vec<f64> {
        self.inner.lower()
    }

    #[getter]
    fn upper(&self) -> Vec<f64> {
        self.inner.upper()
    }

    fn set_bounds(&mut self, name: &str, lower: f64, upper: f64) -> PyResult<()> {
        self.inner.set_bounds(name, lower, upper).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec({})", self.inner.names().join(", "))
    }
}

fn serde_json_from_str(text: &str) -> PyResult<g2fit_core::ModelSpec> {
    g2fit_core::io::parse_json::<g2fit_core::ModelSpec>(text).map_err(err)
}

#[pyclass(name = "FitResult", module = "g2fit", skip_from_py_object)]
pub struct PyFitResult {
    #[pyo3(get)]
    theta_hat: Vec<f64>,
    #[pyo3(get)]
    objective_value: f64,
    #[pyo3(get)]
    objective_kind: String,
    #[pyo3(get)]
    n_restarts: usize,
    #[pyo3(get)]
    n_converged: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    fitted_curve: Vec<f64>,
    #[pyo3(get)]
    total_photons: u64,
    #[pyo3(get)]
    wall_time: f64,
    /// `(index, value, theta)` of the best restarts, best first.
    #[pyo3(get)]
    top_restarts: Vec<(usize, f64, Vec<f64>)>,
    fit: g2fit_core::FitResult,
}

#[pymethods]
impl PyFitResult {
    fn __repr__(&self) -> String {
        format!(
            "FitResult({} value={:.6}, converged {}/{})",
            self.objective_kind, self.objective_value, self.n_converged, self.n_restarts
        )
    }

    /// Simulated histograms of the fitted curve scaled by each `T`.
    fn integration_time_ladder(&self, grid: &PyDelayGrid, ladder: Vec<f64>, seed: u64) -> PyResult<Vec<(f64, PyHistogram, Option<f64>)>> {
        let rungs = integration_time_ladder(&self.fit, &grid.inner, &ladder, seed).map_err(err)?;
        Ok(rungs
            .into_iter()
            .map(|r| (r.time_scale, PyHistogram { inner: r.histogram }, r.nrmse))
            .collect())
    }
}

impl From<g2fit_core::FitResult> for PyFitResult {
    fn from(f: g2fit_core::FitResult) -> Self {
        Self {
            theta_hat: f.theta_hat.clone(),
            objective_value: f.objective_value,
            objective_kind: f.objective_kind.to_string(),
            n_restarts: f.n_restarts,
            n_converged: f.n_converged,
            converged: f.converged,
            fitted_curve: f.fitted_curve.clone(),
            total_photons: f.total_photons,
            wall_time: f.wall_time,
            top_restarts: f.restart_records.iter().map(|r| (r.index, r.value, r.theta.clone())).collect(),
            fit: f,
        }
    }
}

#[pyfunction]
fn evaluate(spec: &PyModelSpec, theta: Vec<f64>, grid: &PyDelayGrid) -> PyResult<Vec<f64>> {
    g2fit_core::evaluate(&spec.inner, &theta, &grid.inner).map_err(err)
}

#[pyfunction]
fn poisson_loglik(y: Vec<f64>, counts: Vec<u64>) -> PyResult<f64> {
    g2fit_core::poisson_loglik(&y, &counts).map_err(err)
}

#[pyfunction]
fn loglik_grad_y(y: Vec<f64>, counts: Vec<u64>) -> PyResult<Vec<f64>> {
    g2fit_core::loglik_grad_y(&y, &counts).map_err(err)
}

/// Log-likelihood plus the Laplace log-prior with weight `lam` on the
/// amplitudes; `lam = 0` is the plain log-likelihood.
#[pyfunction]
#[pyo3(signature = (theta, spec, hist, lam=0.0))]
fn map_objective(theta: Vec<f64>, spec: &PyModelSpec, hist: &PyHistogram, lam: f64) -> PyResult<f64> {
    g2fit_core::map_objective(&theta, &spec.inner, &hist.inner, &objective_config(lam)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (spec, hist, lam=0.0, restarts=64, seed=0, latin_hypercube=false, least_squares=false))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    spec: &PyModelSpec,
    hist: &PyHistogram,
    lam: f64,
    restarts: usize,
    seed: u64,
    latin_hypercube: bool,
    least_squares: bool,
) -> PyResult<PyFitResult> {
    let plan = MultiStartPlan {
        restarts,
        seed,
        guess_strategy: if latin_hypercube {
            GuessStrategy::LatinHypercube
        } else {
            GuessStrategy::UniformInBounds
        },
        parallel: true,
        ..MultiStartPlan::default()
    };
    let settings = Default::default();
    let (spec, hist) = (spec.inner.clone(), hist.inner.clone());
    let result = py.detach(move || {
        if least_squares {
            multistart_least_squares(&spec, &hist, &plan, &settings)
        } else {
            let problem = FitProblem::new(spec, hist, objective_config(lam))?;
            multistart_maximize(&problem, &plan, &settings)
        }
    });
    Ok(result.map_err(err)?.into())
}

#[pyfunction]
fn scale_signal(y: Vec<f64>, time_scale: f64) -> PyResult<Vec<f64>> {
    g2fit_core::scale_signal(&y, time_scale).map_err(err)
}

#[pyfunction]
fn sample_poisson(rate: Vec<f64>, seed: u64) -> PyResult<Vec<u64>> {
    g2fit_core::sample_poisson(&rate, seed).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (spec, theta, grid, time_scale, seed=0, n_replicates=1))]
fn generate_synthetic(
    spec: &PyModelSpec,
    theta: Vec<f64>,
    grid: &PyDelayGrid,
    time_scale: f64,
    seed: u64,
    n_replicates: usize,
) -> PyResult<Vec<PyHistogram>> {
    let config = g2fit_core::SamplerConfig {
        time_scale,
        seed,
        n_replicates,
    };
    let reps = g2fit_core::generate_synthetic(&spec.inner, &theta, &grid.inner, &config).map_err(err)?;
    Ok(reps.into_iter().map(|r| PyHistogram { inner: r.histogram }).collect())
}

#[pyfunction]
fn nrmse(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    g2fit_core::nrmse(&estimate, &reference).map_err(err)
}

/// Per-bin `(mean, variance, variance/mean)` over Poisson replicates.
#[pyfunction]
fn crb_check(
    spec: &PyModelSpec,
    theta: Vec<f64>,
    grid: &PyDelayGrid,
    time_scale: f64,
    n_replicates: usize,
    seed: u64,
) -> PyResult<Vec<(f64, f64, Option<f64>)>> {
    let r = crb_empirical_check(&spec.inner, &theta, &grid.inner, time_scale, n_replicates, seed).map_err(err)?;
    Ok(r.bins.iter().map(|b| (b.mean, b.variance, b.ratio)).collect())
}

#[pyfunction]
fn default_truncation(grid: &PyDelayGrid, lambda_lower_bound: f64) -> PyResult<usize> {
    g2fit_core::default_truncation(&grid.inner, lambda_lower_bound).map_err(err)
}

/// Bundled synthetic fixture `(spec, theta, grid)` by name.
#[pyfunction]
fn fixture(name: &str) -> PyResult<(PyModelSpec, Vec<f64>, PyDelayGrid)> {
    let fx = fixtures::by_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown fixture `{name}`")))?;
    Ok((PyModelSpec { inner: fx.spec }, fx.theta, PyDelayGrid { inner: fx.grid }))
}

#[pymodule]
fn g2fit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDelayGrid>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(loglik_grad_y, m)?)?;
    m.add_function(wrap_pyfunction!(map_objective, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(scale_signal, m)?)?;
    m.add_function(wrap_pyfunction!(sample_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(nrmse, m)?)?;
    m.add_function(wrap_pyfunction!(crb_check, m)?)?;
    m.add_function(wrap_pyfunction!(default_truncation, m)?)?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    Ok(())
}
