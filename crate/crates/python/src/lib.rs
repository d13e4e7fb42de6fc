//! Python bindings: structures, modal and TMD tuning, configs, and the
//! simulate / identify / sweep operations.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stiffwatch::adaptive::{run_identification, threshold, AdaptationConfig, SensorSuite};
use stiffwatch::config::{RunConfig, StructureFile};
use stiffwatch::harness::{self, SweepResult};
use stiffwatch::{
    assemble_matrices, modal_analysis, warburton_tune, Channel, DiscretizationOrder, Error, FilterConfig,
    IdentificationModel, SensorLayout, SignalSeries, StructureSpec, TmdSpec,
};

create_exception!(stiffwatch_py, ValidationError, PyValueError);
create_exception!(stiffwatch_py, DivergenceError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    if e.is_divergence() {
        DivergenceError::new_err(e.to_string())
    } else {
        ValidationError::new_err(e.to_string())
    }
}

/// Shear frame, optionally with a roof TMD. All values in SI units.
#[pyclass(name = "Structure", module = "stiffwatch_py", from_py_object)]
#[derive(Clone)]
struct PyStructure {
    inner: StructureSpec,
}

#[pymethods]
impl PyStructure {
    #[new]
    #[pyo3(signature = (masses, stiffnesses, dampings, tmd=None))]
    fn new(masses: Vec<f64>, stiffnesses: Vec<f64>, dampings: Vec<f64>, tmd: Option<(f64, f64, f64)>) -> PyResult<Self> {
        let mut spec = StructureSpec::shear_frame(masses, stiffnesses, dampings).map_err(to_py)?;
        if let Some((m, k, c)) = tmd {
            spec = spec.with_tmd(TmdSpec::new(m, k, c).map_err(to_py)?).map_err(to_py)?;
        }
        Ok(PyStructure { inner: spec })
    }

    /// The two-story benchmark frame, with or without its TMD.
    #[staticmethod]
    #[pyo3(signature = (tmd=true))]
    fn benchmark(tmd: bool) -> Self {
        let inner = if tmd {
            StructureSpec::benchmark_two_story_tmd()
        } else {
            StructureSpec::benchmark_two_story()
        };
        PyStructure { inner }
    }

    /// Load a structure TOML file with explicit units.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = StructureFile::load(&path).map_err(to_py)?;
        Ok(PyStructure {
            inner: file.resolve().map_err(to_py)?.spec,
        })
    }

    #[getter]
    fn n_dof(&self) -> usize {
        self.inner.n_dof()
    }

    #[getter]
    fn story_stiffness(&self) -> Vec<f64> {
        self.inner.story_stiffness.clone()
    }

    #[getter]
    fn has_tmd(&self) -> bool {
        self.inner.has_tmd()
    }

    fn without_tmd(&self) -> Self {
        PyStructure {
            inner: self.inner.without_tmd(),
        }
    }

    /// Natural frequencies [Hz] and damping ratios [-].
    fn modal<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let mats = assemble_matrices(&self.inner).map_err(to_py)?;
        let modal = modal_analysis(&mats).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("frequencies", modal.natural_frequencies)?;
        d.set_item("damping_ratios", modal.damping_ratios)?;
        Ok(d)
    }

    /// Warburton-optimal TMD for `damper_mass` [kg] on the bare frame.
    fn warburton<'py>(&self, py: Python<'py>, damper_mass: f64) -> PyResult<Bound<'py, PyDict>> {
        let bare = self.inner.without_tmd();
        let mats = assemble_matrices(&bare).map_err(to_py)?;
        let modal = modal_analysis(&mats).map_err(to_py)?;
        let t = warburton_tune(&mats, &modal, damper_mass).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("mass_ratio", t.mass_ratio)?;
        d.set_item("frequency", t.optimal_frequency)?;
        d.set_item("damping_ratio", t.optimal_damping_ratio)?;
        d.set_item("mass", t.tmd.mass)?;
        d.set_item("stiffness", t.tmd.stiffness)?;
        d.set_item("damping", t.tmd.damping)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Structure(stories={}, tmd={})",
            self.inner.n_stories(),
            self.inner.has_tmd()
        )
    }
}

/// A run configuration.
#[pyclass(name = "Config", module = "stiffwatch_py", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    #[pyo3(signature = (path, overrides=Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(&path, &overrides).map_err(to_py)?,
        })
    }

    /// Parse TOML text; relative paths resolve against `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (text, base_dir=PathBuf::from("."), overrides=Vec::new()))]
    fn from_toml(text: &str, base_dir: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::from_toml(text, &base_dir, &overrides).map_err(to_py)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(to_py)
    }
}

fn realized_dicts<'py>(py: Python<'py>, sc: &harness::Scenario) -> PyResult<Vec<Bound<'py, PyDict>>> {
    sc.truth
        .realized
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("story", r.parameter + 1)?;
            d.set_item("time", r.time)?;
            d.set_item("new_stiffness", r.new_stiffness)?;
            Ok(d)
        })
        .collect()
}

/// Simulate the configured scenario into `out_dir`; returns realized damage.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let sc = py
        .detach(|| harness::simulate(&config.inner, &out_dir))
        .map_err(to_py)?;
    realized_dicts(py, &sc)
}

/// Identify the configured scenario (or `data_dir`) into `out_dir`; returns
/// the metrics as a TOML string.
#[pyfunction]
#[pyo3(signature = (config, out_dir, data_dir=None))]
fn identify(py: Python<'_>, config: &PyConfig, out_dir: PathBuf, data_dir: Option<PathBuf>) -> PyResult<String> {
    let ident = py
        .detach(|| harness::identify(&config.inner, data_dir.as_deref(), &out_dir))
        .map_err(to_py)?;
    ident.metrics.to_toml().map_err(to_py)
}

fn sweep_rows<'py>(py: Python<'py>, result: &SweepResult) -> PyResult<Vec<Bound<'py, PyDict>>> {
    result
        .cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("variant", c.variant.to_string())?;
            d.set_item("p0", c.p0)?;
            d.set_item("q", c.q)?;
            d.set_item("order", c.order)?;
            d.set_item("final_stiffness", c.final_stiffness.clone())?;
            d.set_item("error_pct", c.error_pct.clone())?;
            d.set_item("diverged", c.diverged)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn sweep_covariance<'py>(py: Python<'py>, config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let r = py
        .detach(|| harness::sweep_covariance(&config.inner, &out_dir))
        .map_err(to_py)?;
    sweep_rows(py, &r)
}

#[pyfunction]
fn sweep_model<'py>(py: Python<'py>, config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let r = py
        .detach(|| harness::sweep_model(&config.inner, &out_dir))
        .map_err(to_py)?;
    sweep_rows(py, &r)
}

#[pyfunction]
fn report(dir: PathBuf) -> PyResult<String> {
    harness::report(&dir).map_err(to_py)
}

/// γ₀ for `sensor_count` sensors of one kind ("acceleration" or "kinematic").
#[pyfunction]
#[pyo3(signature = (sensor_count, z0=3.0 * std::f64::consts::SQRT_2, kind="acceleration"))]
fn detection_threshold(sensor_count: usize, z0: f64, kind: &str) -> PyResult<f64> {
    let suite = match kind {
        "acceleration" => SensorSuite::Acceleration,
        "kinematic" => SensorSuite::Kinematic,
        other => return Err(ValidationError::new_err(format!("unknown sensor kind '{other}'"))),
    };
    let mut cfg = AdaptationConfig::new(suite, sensor_count);
    cfg.z0 = z0;
    cfg.validate().map_err(to_py)?;
    Ok(threshold(&cfg))
}

/// Run the filter on raw arrays. `measurements` holds one row per sample,
/// `ground_accel` one value per sample; returns the stiffness history [N/m],
/// γ history and detections.
#[pyfunction]
#[pyo3(signature = (
    structure, measurements, ground_accel, ts, initial_stiffness,
    sensors="a1,a2", p0=1e-6, q=1e-9, r=1e-4, order=3, adaptive=true
))]
#[allow(clippy::too_many_arguments)]
fn identify_arrays<'py>(
    py: Python<'py>,
    structure: &PyStructure,
    measurements: Vec<Vec<f64>>,
    ground_accel: Vec<f64>,
    ts: f64,
    initial_stiffness: Vec<f64>,
    sensors: &str,
    p0: f64,
    q: f64,
    r: f64,
    order: usize,
    adaptive: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let layout = SensorLayout::parse(sensors).map_err(to_py)?;
    let channels = (0..layout.len()).map(|i| Channel::new(format!("y{}", i + 1), "sensor")).collect();
    let meas = SignalSeries::new(ts, channels, measurements).map_err(to_py)?;
    let ground = SignalSeries::from_values(ts, Channel::new("ag", "m/s^2"), ground_accel).map_err(to_py)?;
    let model = IdentificationModel::new(&structure.inner, layout.clone(), ts, DiscretizationOrder::Taylor(order))
        .map_err(to_py)?;
    let mut fc = FilterConfig::scalar(model.layout().dim(), model.output_dim(), p0, q, r);
    fc.taylor_order = order;
    let ad = if adaptive {
        let suite = SensorSuite::from_kinds(layout.sensors.iter().map(|s| s.kind)).map_err(to_py)?;
        Some(AdaptationConfig::new(suite, model.output_dim()))
    } else {
        None
    };
    let run = py
        .detach(|| run_identification(&meas, &ground, &model, &initial_stiffness, &fc, ad.as_ref()))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    let history: Vec<Vec<f64>> = run.means.iter().map(|x| model.stiffness_of(x)).collect();
    d.set_item("stiffness", history)?;
    d.set_item("gamma", run.gammas.clone())?;
    let detections: Vec<(f64, usize, f64)> = run.log.events.iter().map(|e| (e.time, e.index + 1, e.gamma)).collect();
    d.set_item("detections", detections)?;
    d.set_item("threshold", run.log.threshold)?;
    d.set_item("diverged", run.divergence.is_some())?;
    Ok(d)
}

#[pymodule]
fn stiffwatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", stiffwatch::VERSION)?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add_class::<PyStructure>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(identify_arrays, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_model, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(detection_threshold, m)?)?;
    Ok(())
}
