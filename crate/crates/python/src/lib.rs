//! Python bindings.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ris::em::{assemble_kernel, psf_values, AssemblyOptions, KernelKind};
use ris::experiment::{simulate_point, PointInputs, TargetSource};
use ris::masks::{design_amplitudes, hadamard as hadamard_matrix, ideal_masks_with, PhaseRule};
use ris::measurement::{thermal_noise_dbm as thermal_dbm, NoiseMode};
use ris::reconstruct::{estimate_c, nmse as nmse_of, Calibration};
use ris::scene::{
    resolution, resolution_from_sine as from_sine, sample_grids, validate_scene, SceneConfig, TargetKind, ValidatedScene,
};
use ris::synthesis::{gamma_for_distance, realize_masks, tikhonov_inverse_with, TruncationRule, DEFAULT_THRESHOLD_FACTOR};

fn py_err(e: ris::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated scene. Build from a kind (`"plane"` or `"volume"`) or a
/// config string.
#[pyclass(name = "Scene", module = "ris_imaging", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: ValidatedScene,
}

#[pymethods]
impl PyScene {
    #[new]
    #[pyo3(signature = (kind = "plane", target_distance = None))]
    fn new(kind: &str, target_distance: Option<f64>) -> PyResult<Self> {
        let mut cfg = match kind {
            "plane" => SceneConfig::desk_2d(),
            "volume" => SceneConfig::desk_3d(),
            other => return Err(PyValueError::new_err(format!("unknown scene kind `{other}`"))),
        };
        if let Some(z) = target_distance {
            cfg.target_distance = z;
        }
        Self::wrap(cfg)
    }

    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        Self::wrap(SceneConfig::from_config_str(text).map_err(py_err)?)
    }

    fn to_config(&self) -> String {
        self.inner.to_config_string()
    }

    /// Same scene moved to another target distance.
    fn at_distance(&self, target_distance: f64) -> PyResult<Self> {
        Self::wrap(SceneConfig {
            target_distance,
            ..self.inner.config().clone()
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn ris_count(&self) -> usize {
        self.inner.ris_count()
    }

    #[getter]
    fn target_count(&self) -> usize {
        self.inner.target_count()
    }

    #[getter]
    fn target_distance(&self) -> f64 {
        self.inner.target_distance
    }

    #[getter]
    fn wavenumber(&self) -> f64 {
        self.inner.wavenumber()
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }

    #[getter]
    fn ris_rayleigh_distance(&self) -> f64 {
        self.inner.ris_rayleigh_distance()
    }

    /// `(dx, dy)` cross-range resolution in metres.
    fn resolution(&self) -> (f64, f64) {
        let r = resolution(&self.inner);
        (r.dx, r.dy)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(kind={:?}, N={}, M={}, z={})",
            self.kind(),
            self.ris_count(),
            self.target_count(),
            self.inner.target_distance
        )
    }
}

impl PyScene {
    fn wrap(cfg: SceneConfig) -> PyResult<Self> {
        Ok(Self {
            inner: validate_scene(cfg).map_err(py_err)?,
        })
    }
}

#[pyfunction]
fn resolution_from_sine(wavelength: f64, sine: f64) -> f64 {
    from_sine(wavelength, sine)
}

#[pyfunction]
fn thermal_noise_dbm(density_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    thermal_dbm(density_dbm_per_hz, bandwidth_hz)
}

/// Sylvester Hadamard matrix as nested lists of +-1.
#[pyfunction]
fn hadamard(order: usize) -> PyResult<Vec<Vec<i8>>> {
    let h = hadamard_matrix(order).map_err(py_err)?;
    Ok(h.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// 0/1 mask amplitudes, one row per measurement.
#[pyfunction]
fn amplitudes(measurements: usize, points: usize) -> PyResult<Vec<Vec<f64>>> {
    design_amplitudes(measurements, points).map_err(py_err)
}

/// Singular values of the scene kernel, largest first.
#[pyfunction]
#[pyo3(signature = (scene, gamma = None))]
fn singular_values(py: Python<'_>, scene: &PyScene, gamma: Option<f64>) -> PyResult<Vec<f64>> {
    let scene = &scene.inner;
    py.detach(|| {
        let grids = sample_grids(scene);
        let kernel = assemble_kernel(scene, &grids, KernelKind::for_target(scene.kind()), AssemblyOptions::default())?;
        let gamma = gamma.unwrap_or_else(|| gamma_for_distance(scene.target_distance));
        Ok(tikhonov_inverse_with(&kernel, gamma, DEFAULT_THRESHOLD_FACTOR, TruncationRule::Squared)?.singular_values)
    })
    .map_err(py_err)
}

/// Simulates one measurement run and reconstructs the target. Returns a
/// dict with `nmse`, `estimate`, `truth` and `rank` (None without synthesis).
#[pyfunction]
#[pyo3(signature = (scene, measurements, snr_db = None, seed = 0, target = None, ideal_masks = false, exact_phases = false, calibration = "cell", gamma = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    scene: &PyScene,
    measurements: usize,
    snr_db: Option<f64>,
    seed: u64,
    target: Option<&str>,
    ideal_masks: bool,
    exact_phases: bool,
    calibration: &str,
    gamma: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let scene = &scene.inner;
    let calibration = Calibration::parse(calibration).map_err(py_err)?;
    let target = TargetSource::parse(target.unwrap_or(match scene.kind() {
        TargetKind::Plane2d => "letters-seu",
        TargetKind::Volume3d => "columnar-seu",
    }));
    let noise = snr_db.map_or(NoiseMode::Noiseless, |snr_db| NoiseMode::Relative { snr_db });
    let rule = if exact_phases { PhaseRule::Exact } else { PhaseRule::Linearized };

    let (result, truth, rank) = py
        .detach(|| -> ris::Result<_> {
            let grids = sample_grids(scene);
            let model = target.load(scene)?;
            let ideal = ideal_masks_with(scene, &grids, measurements, rule)?;
            let (masks, rank, gamma) = if ideal_masks {
                (ideal, None, None)
            } else {
                let kernel = assemble_kernel(scene, &grids, KernelKind::for_target(scene.kind()), AssemblyOptions::default())?;
                let gamma = gamma.unwrap_or_else(|| gamma_for_distance(scene.target_distance));
                let inv = tikhonov_inverse_with(&kernel, gamma, DEFAULT_THRESHOLD_FACTOR, TruncationRule::Squared)?;
                (realize_masks(&kernel, &inv, &ideal, scene.amplification)?, Some(inv.rank), Some(gamma))
            };
            let variance = estimate_c(masks.active(), scene.kind())?;
            let psf = psf_values(scene, &grids);
            let inputs = PointInputs {
                scene,
                grids: &grids,
                target: &model,
                masks: &masks,
                variance: &variance,
                psf: &psf,
            };
            let result = simulate_point(&inputs, noise, seed, calibration, gamma)?;
            Ok((result, model.values(), rank))
        })
        .map_err(py_err)?;

    let out = PyDict::new(py);
    out.set_item("nmse", result.nmse)?;
    out.set_item("estimate", result.estimate)?;
    out.set_item("truth", truth)?;
    out.set_item("rank", rank)?;
    out.set_item("flagged", result.variance.flagged_count())?;
    Ok(out)
}

#[pyfunction]
fn nmse(truth: Vec<Complex64>, estimate: Vec<Complex64>) -> PyResult<f64> {
    nmse_of(&truth, &estimate).map_err(py_err)
}

#[pymodule(name = "ris_imaging")]
fn ris_imaging_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(resolution_from_sine, m)?)?;
    m.add_function(wrap_pyfunction!(thermal_noise_dbm, m)?)?;
    m.add_function(wrap_pyfunction!(hadamard, m)?)?;
    m.add_function(wrap_pyfunction!(amplitudes, m)?)?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    Ok(())
}
