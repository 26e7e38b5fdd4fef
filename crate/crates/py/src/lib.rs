//! Python bindings for the morphfit pipeline: confidence maps, circle
//! detection, point-distribution shape models, point-set registration,
//! shape fitting, synthetic fixtures, and radiograph rendering.
//!
//! Fit results cross the boundary as plain dictionaries and point lists as
//! `(x, y)` tuples, so the module has no dependency on any Python array
//! library. Domain and validation failures raise `ValueError`; file
//! operations raise `OSError`; out-of-range indices raise `IndexError`.

use std::fmt::Display;
use std::path::PathBuf;

use nalgebra::{Point3, Vector3};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use morphfit::circlefit::{
    algebraic_fit, detect_circle as detect_circle_impl, geometric_fit, CircleFitError,
    DetectionConfig, FitMethod, GeometricFitConfig,
};
use morphfit::confmap::ConfidenceMap as CoreConfidenceMap;
use morphfit::cpd::{cpd_register as cpd_plain, cpd_register_robust, CpdConfig};
use morphfit::drr::{load_ctvol, render, CameraGeometry, RenderConfig};
use morphfit::geometry::{circle_polyline, Circle, Point, Polyline};
use morphfit::metrics::{
    circle_param_rmse as circle_param_rmse_impl, point_to_curve_rmse as point_to_curve_rmse_impl,
};
use morphfit::morph::{fit_shape as fit_shape_impl, MorphConfig};
use morphfit::pdm::{build_pdm as build_pdm_impl, PointDistributionModel as CorePdm};
use morphfit::synth::{
    confmap_from_outline, generate_shape_family as generate_shape_family_impl, SynthConfig,
};
use morphfit::transform::SimilarityTransform2D;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_points(pairs: &[(f64, f64)]) -> Vec<Point> {
    pairs.iter().map(|&(x, y)| Point::new(x, y)).collect()
}

fn from_points(points: &[Point]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.x, p.y)).collect()
}

fn pose_dict<'py>(py: Python<'py>, pose: &SimilarityTransform2D) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("rotation", pose.rotation)?;
    d.set_item("scale", pose.scale)?;
    d.set_item("tx", pose.tx)?;
    d.set_item("ty", pose.ty)?;
    d.set_item("reflected", pose.reflected)?;
    Ok(d)
}

/// A dense `[0, 1]` confidence image in row-major order.
#[pyclass]
struct ConfidenceMap {
    inner: CoreConfidenceMap,
}

#[pymethods]
impl ConfidenceMap {
    #[new]
    fn new(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        CoreConfidenceMap::new(width, height, values)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// An all-zero map of the given size.
    #[staticmethod]
    fn zeros(width: usize, height: usize) -> PyResult<Self> {
        CoreConfidenceMap::zeros(width, height)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreConfidenceMap::load(&path)
            .map(|inner| Self { inner })
            .map_err(io_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    /// All pixel values, row-major.
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// The value at pixel `(x, y)`.
    fn get(&self, x: usize, y: usize) -> PyResult<f64> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyIndexError::new_err(format!(
                "pixel ({x}, {y}) outside {}x{} map",
                self.inner.width(),
                self.inner.height()
            )));
        }
        Ok(self.inner.get(x, y))
    }

    /// Bilinear interpolation at a continuous position; zero outside the
    /// pixel-center rectangle.
    fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        self.inner.sample_bilinear(x, y)
    }

    /// Centers of the pixels whose value is strictly above `tau`.
    #[pyo3(signature = (tau = 0.5))]
    fn threshold_foreground(&self, tau: f64) -> Vec<(f64, f64)> {
        from_points(&self.inner.threshold_foreground(tau))
    }

    fn __repr__(&self) -> String {
        format!(
            "ConfidenceMap(width={}, height={})",
            self.inner.width(),
            self.inner.height()
        )
    }
}

/// A linear point-distribution shape model: mean landmarks plus orthonormal
/// variation modes scaled by their variances.
#[pyclass]
struct PointDistributionModel {
    inner: CorePdm,
}

#[pymethods]
impl PointDistributionModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CorePdm::load(&path)
            .map(|inner| Self { inner })
            .map_err(io_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[getter]
    fn n_landmarks(&self) -> usize {
        self.inner.n_landmarks()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    /// Per-mode variances, largest first.
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn mean_shape(&self) -> Vec<(f64, f64)> {
        from_points(&self.inner.mean_shape())
    }

    /// Mode `i` as a displacement field over the landmarks.
    fn mode(&self, i: usize) -> PyResult<Vec<(f64, f64)>> {
        if i >= self.inner.n_modes() {
            return Err(PyIndexError::new_err(format!(
                "mode {i} of {}",
                self.inner.n_modes()
            )));
        }
        Ok(from_points(&self.inner.mode(i)))
    }

    /// Coefficients of `shape` in the mode basis.
    fn project(&self, shape: Vec<(f64, f64)>) -> PyResult<Vec<f64>> {
        self.inner.project(&to_points(&shape)).map_err(value_err)
    }

    /// The shape generated by the given mode coefficients.
    fn reconstruct(&self, coefficients: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
        self.inner
            .reconstruct(&coefficients)
            .map(|points| from_points(&points))
            .map_err(value_err)
    }

    /// Coefficients clamped to three standard deviations per mode.
    fn constrain(&self, coefficients: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.constrain(&coefficients).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "PointDistributionModel(n_landmarks={}, n_modes={})",
            self.inner.n_landmarks(),
            self.inner.n_modes()
        )
    }
}

/// Least-squares circle through `points`; returns `(cx, cy, r)`.
#[pyfunction]
fn algebraic_circle_fit(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let circle = algebraic_fit(&to_points(&points)).map_err(value_err)?;
    Ok((circle.cx, circle.cy, circle.r))
}

/// Damped least-squares refinement of the orthogonal-distance circle cost.
///
/// Starts from `init` when given, otherwise from the algebraic fit. If the
/// iteration budget runs out, the best iterate found is returned with
/// `converged` set to `False`.
#[pyfunction]
#[pyo3(signature = (points, init = None, *, max_iterations = None, step_tolerance = None))]
fn geometric_circle_fit<'py>(
    py: Python<'py>,
    points: Vec<(f64, f64)>,
    init: Option<(f64, f64, f64)>,
    max_iterations: Option<usize>,
    step_tolerance: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let points = to_points(&points);
    let seed = match init {
        Some((cx, cy, r)) => Circle::new(cx, cy, r).map_err(value_err)?,
        None => algebraic_fit(&points).map_err(value_err)?,
    };
    let mut config = GeometricFitConfig::default();
    if let Some(n) = max_iterations {
        config.max_iterations = n;
    }
    if let Some(t) = step_tolerance {
        config.step_tolerance = t;
    }
    let (circle, cost, iterations, converged) = match geometric_fit(&points, &seed, &config) {
        Ok(fit) => (fit.circle, fit.cost, fit.iterations, true),
        Err(CircleFitError::NonConvergence {
            best,
            cost,
            iterations,
        }) => (best, cost, iterations, false),
        Err(e) => return Err(value_err(e)),
    };
    let d = PyDict::new(py);
    d.set_item("cx", circle.cx)?;
    d.set_item("cy", circle.cy)?;
    d.set_item("r", circle.r)?;
    d.set_item("cost", cost)?;
    d.set_item("iterations", iterations)?;
    d.set_item("converged", converged)?;
    Ok(d)
}

/// Threshold `map`, gate on the foreground count, and fit a circle to the
/// foreground pixel centers. `method` is `"algebraic"` or `"geometric"`.
#[pyfunction]
#[pyo3(signature = (map, *, tau = None, min_foreground = None, method = "algebraic"))]
fn detect_circle<'py>(
    py: Python<'py>,
    map: &ConfidenceMap,
    tau: Option<f64>,
    min_foreground: Option<usize>,
    method: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let method: FitMethod = method.parse().map_err(|e: String| PyValueError::new_err(e))?;
    let mut config = DetectionConfig {
        method,
        ..DetectionConfig::default()
    };
    if let Some(t) = tau {
        config.tau = t;
    }
    if let Some(n) = min_foreground {
        config.min_foreground = n;
    }
    let detection = detect_circle_impl(&map.inner, &config).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("cx", detection.circle.cx)?;
    d.set_item("cy", detection.circle.cy)?;
    d.set_item("r", detection.circle.r)?;
    d.set_item("cost", detection.cost)?;
    d.set_item("n_foreground", detection.n_foreground)?;
    d.set_item("method", detection.method.to_string())?;
    Ok(d)
}

/// Build a shape model from aligned training shapes, keeping enough modes to
/// explain `variance_fraction` of the total variance.
#[pyfunction]
#[pyo3(signature = (shapes, variance_fraction = 0.95))]
fn build_pdm(shapes: Vec<Vec<(f64, f64)>>, variance_fraction: f64) -> PyResult<PointDistributionModel> {
    let shapes: Vec<Vec<Point>> = shapes.iter().map(|s| to_points(s)).collect();
    build_pdm_impl(&shapes, variance_fraction)
        .map(|inner| PointDistributionModel { inner })
        .map_err(value_err)
}

/// Rigid or similarity registration of `source` onto `target` by
/// expectation-maximization with an outlier component.
///
/// With `rotations > 1` or `try_reflection`, the registration restarts from
/// several initial poses and keeps the best final objective.
#[pyfunction]
#[pyo3(signature = (
    source,
    target,
    *,
    estimate_scale = None,
    outlier_weight = None,
    max_iterations = None,
    sigma_tolerance = None,
    max_target_points = None,
    rotations = 1,
    try_reflection = false,
))]
#[allow(clippy::too_many_arguments)]
fn cpd_register<'py>(
    py: Python<'py>,
    source: Vec<(f64, f64)>,
    target: Vec<(f64, f64)>,
    estimate_scale: Option<bool>,
    outlier_weight: Option<f64>,
    max_iterations: Option<usize>,
    sigma_tolerance: Option<f64>,
    max_target_points: Option<usize>,
    rotations: usize,
    try_reflection: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let source = to_points(&source);
    let target = to_points(&target);
    let mut config = CpdConfig::default();
    if let Some(v) = estimate_scale {
        config.estimate_scale = v;
    }
    if let Some(v) = outlier_weight {
        config.outlier_weight = v;
    }
    if let Some(v) = max_iterations {
        config.max_iterations = v;
    }
    if let Some(v) = sigma_tolerance {
        config.sigma_tolerance = v;
    }
    if let Some(v) = max_target_points {
        config.max_target_points = v;
    }
    let result = if rotations > 1 || try_reflection {
        cpd_register_robust(&source, &target, &config, rotations, try_reflection)
    } else {
        cpd_plain(&source, &target, &config)
    }
    .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("pose", pose_dict(py, &result.transform)?)?;
    d.set_item("sigma2", result.final_sigma2)?;
    d.set_item("objective", result.objective)?;
    d.set_item("iterations", result.iterations)?;
    Ok(d)
}

/// Fit a shape model to a confidence map: registration-based initialization,
/// then alternating ridge search along landmark normals and constrained
/// model updates.
#[pyfunction]
#[pyo3(signature = (
    model,
    map,
    *,
    profile_half_length = None,
    profile_step = None,
    max_iterations = None,
    convergence_tolerance = None,
    tau = None,
    closed = None,
    n_rotations = None,
    try_reflection = None,
))]
#[allow(clippy::too_many_arguments)]
fn fit_shape<'py>(
    py: Python<'py>,
    model: &PointDistributionModel,
    map: &ConfidenceMap,
    profile_half_length: Option<f64>,
    profile_step: Option<f64>,
    max_iterations: Option<usize>,
    convergence_tolerance: Option<f64>,
    tau: Option<f64>,
    closed: Option<bool>,
    n_rotations: Option<usize>,
    try_reflection: Option<bool>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = MorphConfig::default();
    if let Some(v) = profile_half_length {
        config.profile_half_length = v;
    }
    if let Some(v) = profile_step {
        config.profile_step = v;
    }
    if let Some(v) = max_iterations {
        config.max_iterations = v;
    }
    if let Some(v) = convergence_tolerance {
        config.convergence_tolerance = v;
    }
    if let Some(v) = tau {
        config.tau = v;
    }
    if let Some(v) = closed {
        config.closed = v;
    }
    if let Some(v) = n_rotations {
        config.n_rotations = v;
    }
    if let Some(v) = try_reflection {
        config.try_reflection = v;
    }
    let result = fit_shape_impl(&model.inner, &map.inner, &config).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("points", from_points(&result.shape.points))?;
    d.set_item("pose", pose_dict(py, &result.shape.pose)?)?;
    d.set_item("coefficients", result.shape.coefficients)?;
    d.set_item("converged", result.converged)?;
    d.set_item("iterations", result.iterations_used)?;
    d.set_item("movement", result.per_iteration_movement)?;
    Ok(d)
}

fn synth_config(
    ridge_sigma: Option<f64>,
    peak_value: Option<f64>,
    background_noise_sigma: Option<f64>,
    seed: Option<u64>,
) -> PyResult<SynthConfig> {
    let mut config = SynthConfig::default();
    if let Some(v) = ridge_sigma {
        config.ridge_sigma = v;
    }
    if let Some(v) = peak_value {
        config.peak_value = v;
    }
    if let Some(v) = background_noise_sigma {
        config.background_noise_sigma = v;
    }
    if let Some(v) = seed {
        config.seed = v;
    }
    if !(config.ridge_sigma > 0.0) {
        return Err(PyValueError::new_err(format!(
            "ridge_sigma must be positive, got {}",
            config.ridge_sigma
        )));
    }
    if !(config.peak_value > 0.0 && config.peak_value <= 1.0) {
        return Err(PyValueError::new_err(format!(
            "peak_value must be in (0, 1], got {}",
            config.peak_value
        )));
    }
    if !(config.background_noise_sigma >= 0.0) {
        return Err(PyValueError::new_err(format!(
            "background_noise_sigma must be non-negative, got {}",
            config.background_noise_sigma
        )));
    }
    Ok(config)
}

/// A synthetic confidence map with a Gaussian ridge along a circle outline.
#[pyfunction]
#[pyo3(signature = (width, height, cx, cy, r, *, ridge_sigma = None, peak_value = None, background_noise_sigma = None, seed = None))]
#[allow(clippy::too_many_arguments)]
fn synth_circle_map(
    width: usize,
    height: usize,
    cx: f64,
    cy: f64,
    r: f64,
    ridge_sigma: Option<f64>,
    peak_value: Option<f64>,
    background_noise_sigma: Option<f64>,
    seed: Option<u64>,
) -> PyResult<ConfidenceMap> {
    let circle = Circle::new(cx, cy, r).map_err(value_err)?;
    let config = synth_config(ridge_sigma, peak_value, background_noise_sigma, seed)?;
    let outline = circle_polyline(&circle);
    Ok(ConfidenceMap {
        inner: confmap_from_outline(&outline, width, height, &config),
    })
}

/// A synthetic confidence map with a Gaussian ridge along a polyline.
#[pyfunction]
#[pyo3(signature = (width, height, vertices, *, closed = true, ridge_sigma = None, peak_value = None, background_noise_sigma = None, seed = None))]
#[allow(clippy::too_many_arguments)]
fn synth_outline_map(
    width: usize,
    height: usize,
    vertices: Vec<(f64, f64)>,
    closed: bool,
    ridge_sigma: Option<f64>,
    peak_value: Option<f64>,
    background_noise_sigma: Option<f64>,
    seed: Option<u64>,
) -> PyResult<ConfidenceMap> {
    let outline = Polyline::new(to_points(&vertices), closed).map_err(value_err)?;
    let config = synth_config(ridge_sigma, peak_value, background_noise_sigma, seed)?;
    Ok(ConfidenceMap {
        inner: confmap_from_outline(&outline, width, height, &config),
    })
}

/// Random shapes produced by deforming `base` along smooth fields with the
/// given per-mode amplitudes.
#[pyfunction]
#[pyo3(signature = (base, n_shapes, n_modes, mode_amplitudes, seed = 0))]
fn generate_shape_family(
    base: Vec<(f64, f64)>,
    n_shapes: usize,
    n_modes: usize,
    mode_amplitudes: Vec<f64>,
    seed: u64,
) -> PyResult<Vec<Vec<(f64, f64)>>> {
    generate_shape_family_impl(&to_points(&base), n_shapes, n_modes, &mode_amplitudes, seed)
        .map(|family| family.iter().map(|shape| from_points(shape)).collect())
        .map_err(value_err)
}

/// Root-mean-square distance from `points` to the polyline through `curve`.
#[pyfunction]
#[pyo3(signature = (points, curve, *, closed = true))]
fn point_to_curve_rmse(
    points: Vec<(f64, f64)>,
    curve: Vec<(f64, f64)>,
    closed: bool,
) -> PyResult<f64> {
    let curve = Polyline::new(to_points(&curve), closed).map_err(value_err)?;
    point_to_curve_rmse_impl(&to_points(&points), &curve).map_err(value_err)
}

/// Root-mean-square error over the three circle parameters.
#[pyfunction]
fn circle_param_rmse(estimate: (f64, f64, f64), truth: (f64, f64, f64)) -> PyResult<f64> {
    let estimate = Circle::new(estimate.0, estimate.1, estimate.2).map_err(value_err)?;
    let truth = Circle::new(truth.0, truth.1, truth.2).map_err(value_err)?;
    Ok(circle_param_rmse_impl(&estimate, &truth))
}

/// Render a digitally reconstructed radiograph from a CT volume file and
/// write it as a PGM image. Returns the raw grayscale pixels, row-major.
#[pyfunction]
#[pyo3(signature = (
    volume_path,
    out_path,
    *,
    focal_point,
    detector_center,
    pixel_pitch,
    image_size,
    u_axis = (1.0, 0.0, 0.0),
    v_axis = (0.0, 1.0, 0.0),
    circular_mask = false,
    n_samples = None,
    mu_water = None,
    saturation_fraction = None,
    gray_min = None,
    gray_max = None,
))]
#[allow(clippy::too_many_arguments)]
fn render_drr<'py>(
    py: Python<'py>,
    volume_path: PathBuf,
    out_path: PathBuf,
    focal_point: (f64, f64, f64),
    detector_center: (f64, f64, f64),
    pixel_pitch: f64,
    image_size: (usize, usize),
    u_axis: (f64, f64, f64),
    v_axis: (f64, f64, f64),
    circular_mask: bool,
    n_samples: Option<usize>,
    mu_water: Option<f64>,
    saturation_fraction: Option<f64>,
    gray_min: Option<u8>,
    gray_max: Option<u8>,
) -> PyResult<Bound<'py, PyBytes>> {
    let volume = load_ctvol(&volume_path).map_err(io_err)?;
    let camera = CameraGeometry::new(
        Point3::new(focal_point.0, focal_point.1, focal_point.2),
        Point3::new(detector_center.0, detector_center.1, detector_center.2),
        Vector3::new(u_axis.0, u_axis.1, u_axis.2),
        Vector3::new(v_axis.0, v_axis.1, v_axis.2),
        pixel_pitch,
        image_size,
        circular_mask,
    )
    .map_err(value_err)?;
    let mut config = RenderConfig::default();
    if let Some(v) = n_samples {
        config.n_samples = v;
    }
    if let Some(v) = mu_water {
        config.mu_water = v;
    }
    if let Some(v) = saturation_fraction {
        config.saturation_fraction = v;
    }
    if let Some(v) = gray_min {
        config.gray_min = v;
    }
    if let Some(v) = gray_max {
        config.gray_max = v;
    }
    let image = render(&volume, &camera, &config).map_err(value_err)?;
    image.save_pgm(&out_path).map_err(io_err)?;
    Ok(PyBytes::new(py, image.pixels()))
}

#[pymodule]
fn morphfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ConfidenceMap>()?;
    m.add_class::<PointDistributionModel>()?;
    m.add_function(wrap_pyfunction!(algebraic_circle_fit, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_circle_fit, m)?)?;
    m.add_function(wrap_pyfunction!(detect_circle, m)?)?;
    m.add_function(wrap_pyfunction!(build_pdm, m)?)?;
    m.add_function(wrap_pyfunction!(cpd_register, m)?)?;
    m.add_function(wrap_pyfunction!(fit_shape, m)?)?;
    m.add_function(wrap_pyfunction!(synth_circle_map, m)?)?;
    m.add_function(wrap_pyfunction!(synth_outline_map, m)?)?;
    m.add_function(wrap_pyfunction!(generate_shape_family, m)?)?;
    m.add_function(wrap_pyfunction!(point_to_curve_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(circle_param_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(render_drr, m)?)?;
    Ok(())
}
