//! Python bindings: schedules, forward sampling, enhancement, metrics and
//! the verification suite.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cdiffuse::forward::{sample_xt as core_sample_xt, training_target as core_training_target, PairedSignal};
use cdiffuse::predictor::DEFAULT_FRAME;
use cdiffuse::sampler::{enhance as core_enhance, EnhanceOptions};
use cdiffuse::schedule::{build_schedule, MKind, NoiseSchedule, ScheduleConfig, FAST_GAMMA};
use cdiffuse::verify::{run_suite, SuiteOptions};
use cdiffuse::{audio, seeded_rng, GaussianOracle, Predictor, TrainablePredictor};

fn py_err(e: cdiffuse::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Conditional noise schedule indexed by step `t = 0..=T`.
#[pyclass(name = "Schedule", module = "pycdiffuse", frozen, skip_from_py_object)]
struct PySchedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 50, beta_start = 1e-4, beta_end = 0.035, m = "paper"))]
    fn new(steps: usize, beta_start: f64, beta_end: f64, m: &str) -> PyResult<Self> {
        let m_kind: MKind = m.parse().map_err(py_err)?;
        let config = ScheduleConfig {
            steps,
            beta_start,
            beta_end,
            ..ScheduleConfig::base()
        }
        .with_m(m_kind);
        Ok(Self {
            inner: build_schedule(&config).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn base() -> PyResult<Self> {
        Ok(Self {
            inner: build_schedule(&ScheduleConfig::base()).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn large() -> PyResult<Self> {
        Ok(Self {
            inner: build_schedule(&ScheduleConfig::large()).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_betas(betas: Vec<f64>, m: &str) -> PyResult<Self> {
        let m_kind: MKind = m.parse().map_err(py_err)?;
        Ok(Self {
            inner: NoiseSchedule::from_betas(&betas, m_kind).map_err(py_err)?,
        })
    }

    /// Reduced schedule for fast sampling; defaults to the 6-step schedule.
    #[pyo3(signature = (gamma = None))]
    fn fast(&self, gamma: Option<Vec<f64>>) -> PyResult<Self> {
        let gamma = gamma.unwrap_or_else(|| FAST_GAMMA.to_vec());
        Ok(Self {
            inner: self.inner.fast_sampling(&gamma).map_err(py_err)?,
        })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn betas(&self) -> Vec<f64> {
        self.inner.betas().to_vec()
    }

    fn alpha_bars(&self) -> Vec<f64> {
        self.inner.alpha_bars().to_vec()
    }

    fn ms(&self) -> Vec<f64> {
        self.inner.ms().to_vec()
    }

    fn deltas(&self) -> Vec<f64> {
        self.inner.deltas().to_vec()
    }

    fn delta_tilde(&self, t: usize) -> PyResult<f64> {
        self.inner.check_step(t, 1).map_err(py_err)?;
        Ok(self.inner.delta_tilde(t))
    }

    /// `(c_x, c_y, c_eps, variance)` of the reverse step at `t`.
    fn posterior_coefficients(&self, t: usize) -> PyResult<(f64, f64, f64, f64)> {
        let c = self.inner.posterior_coefficients(t).map_err(py_err)?;
        Ok((c.c_x, c.c_y, c.c_eps, c.variance))
    }

    fn to_table(&self) -> String {
        self.inner.to_table()
    }

    fn __repr__(&self) -> String {
        format!("Schedule(steps={})", self.inner.steps())
    }
}

/// Draws `x_t` from the conditional forward marginal; returns `(x_t, eps)`.
#[pyfunction]
#[pyo3(signature = (schedule, x0, y, t, seed = 0))]
fn sample_xt(schedule: &PySchedule, x0: Vec<f64>, y: Vec<f64>, t: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let pair = PairedSignal::new(x0, y).map_err(py_err)?;
    let (state, eps) = core_sample_xt(&schedule.inner, &pair, t, &mut seeded_rng(seed)).map_err(py_err)?;
    Ok((state.x, eps))
}

#[pyfunction]
fn training_target(schedule: &PySchedule, t: usize, x0: Vec<f64>, y: Vec<f64>, eps: Vec<f64>) -> PyResult<Vec<f64>> {
    schedule.inner.check_step(t, 1).map_err(py_err)?;
    if x0.len() != y.len() || x0.len() != eps.len() {
        return Err(PyValueError::new_err("x0, y and eps must have equal length"));
    }
    Ok(core_training_target(&schedule.inner, t, &x0, &y, &eps))
}

fn run_enhance(schedule: &PySchedule, h: &Predictor, y: &[f64], ratio: f64, seed: u64) -> PyResult<Vec<f64>> {
    let opts = EnhanceOptions {
        ratio,
        ..Default::default()
    };
    core_enhance(&schedule.inner, h, y, &mut seeded_rng(seed), opts).map_err(py_err)
}

/// Enhances `y` with the analytic Gaussian predictor.
#[pyfunction]
#[pyo3(signature = (schedule, y, clean_var, noise_var, ratio = 0.2, seed = 0))]
fn enhance_oracle(
    schedule: &PySchedule,
    y: Vec<f64>,
    clean_var: f64,
    noise_var: f64,
    ratio: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let h: Predictor = GaussianOracle::new(clean_var, noise_var).map_err(py_err)?.into();
    run_enhance(schedule, &h, &y, ratio, seed)
}

/// Enhances `y` with a trained checkpoint.
#[pyfunction]
#[pyo3(signature = (schedule, checkpoint, y, ratio = 0.2, seed = 0))]
fn enhance_checkpoint(schedule: &PySchedule, checkpoint: PathBuf, y: Vec<f64>, ratio: f64, seed: u64) -> PyResult<Vec<f64>> {
    let h: Predictor = TrainablePredictor::load(&checkpoint, DEFAULT_FRAME).map_err(py_err)?.into();
    run_enhance(schedule, &h, &y, ratio, seed)
}

#[pyfunction]
fn si_sdr(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    audio::si_sdr(&estimate, &reference).map_err(py_err)
}

#[pyfunction]
fn segmental_snr(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    audio::segmental_snr(&estimate, &reference).map_err(py_err)
}

/// Runs the verification suite; returns one dict per check.
#[pyfunction]
#[pyo3(signature = (fuzz = 100, seed = 0))]
fn verify<'py>(py: Python<'py>, fuzz: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let reports = py.detach(|| {
        run_suite(SuiteOptions {
            fuzz,
            seed,
            ..Default::default()
        })
    });
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("max_error", r.max_error)?;
            d.set_item("threshold", r.threshold)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pycdiffuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(sample_xt, m)?)?;
    m.add_function(wrap_pyfunction!(training_target, m)?)?;
    m.add_function(wrap_pyfunction!(enhance_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(enhance_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(segmental_snr, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("FAST_GAMMA", FAST_GAMMA.to_vec())?;
    Ok(())
}
