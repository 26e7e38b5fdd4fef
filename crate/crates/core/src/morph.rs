//! Two-stage shape fitting on confidence maps: pose initialization by robust
//! point-cloud registration, then alternating orthogonal-profile search and
//! statistical shape constraint until the landmarks stop moving.

use nalgebra::Vector2;
use thiserror::Error;

use crate::confmap::ConfidenceMap;
use crate::cpd::{cpd_register_robust, CpdConfig, CpdError};
use crate::geometry::Point;
use crate::pdm::{PdmError, PointDistributionModel, ShapeVector};
use crate::transform::{similarity_procrustes, ProcrustesOptions, SimilarityTransform2D};

#[derive(Debug, Error)]
pub enum MorphError {
    #[error("{found} foreground pixels above tau={tau}, fewer than the {required} landmarks")]
    InsufficientForeground {
        found: usize,
        required: usize,
        tau: f64,
    },
    #[error("shape has {actual} landmarks, model expects {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error(transparent)]
    Registration(#[from] CpdError),
}

/// Controls for the shape-fit loop.
#[derive(Debug, Clone, Copy)]
pub struct MorphConfig {
    /// Search distance on each side of a landmark, in pixels.
    pub profile_half_length: f64,
    /// Spacing between profile samples, in pixels.
    pub profile_step: f64,
    pub max_iterations: usize,
    /// Stop once the mean landmark movement in one iteration drops below
    /// this many pixels.
    pub convergence_tolerance: f64,
    /// Foreground threshold used for initialization.
    pub tau: f64,
    /// Whether the landmark chain wraps around (affects normal estimation).
    pub closed: bool,
    /// Rotation restarts for the initial registration.
    pub n_rotations: usize,
    /// Also try reflected initial registrations.
    pub try_reflection: bool,
    /// Registration settings for initialization. The default caps the target
    /// at 800 foreground pixels: the pose estimate only needs coverage, not
    /// density, and the profile search refines the placement anyway.
    pub cpd: CpdConfig,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self {
            profile_half_length: 20.0,
            profile_step: 1.0,
            max_iterations: 10,
            convergence_tolerance: 0.5,
            tau: 0.5,
            closed: true,
            n_rotations: 8,
            try_reflection: true,
            cpd: CpdConfig {
                max_target_points: 800,
                ..CpdConfig::default()
            },
        }
    }
}

/// A model placement: landmark positions in image coordinates plus the pose
/// and mode coefficients that generate them.
#[derive(Debug, Clone)]
pub struct ShapeInstance {
    pub points: ShapeVector,
    /// Map from the model frame to the image frame.
    pub pose: SimilarityTransform2D,
    pub coefficients: Vec<f64>,
}

/// Outcome of [`fit_shape`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub shape: ShapeInstance,
    pub iterations_used: usize,
    pub converged: bool,
    /// Mean landmark movement per iteration, in pixels.
    pub per_iteration_movement: Vec<f64>,
}

/// Place the model mean over the map's foreground by robust registration.
///
/// The map is thresholded at `config.tau`; the registration uses the model
/// mean as the moving cloud and the foreground pixels as the target.
pub fn initialize_shape(
    model: &PointDistributionModel,
    map: &ConfidenceMap,
    config: &MorphConfig,
) -> Result<ShapeInstance, MorphError> {
    let foreground = map.threshold_foreground(config.tau);
    if foreground.len() < model.n_landmarks() {
        return Err(MorphError::InsufficientForeground {
            found: foreground.len(),
            required: model.n_landmarks(),
            tau: config.tau,
        });
    }
    let mean = model.mean_shape();
    let registration = cpd_register_robust(
        &mean,
        &foreground,
        &config.cpd,
        config.n_rotations,
        config.try_reflection,
    )?;
    let pose = registration.transform;
    Ok(ShapeInstance {
        points: pose.apply_all(&mean),
        pose,
        coefficients: vec![0.0; model.n_modes()],
    })
}

/// Unit normals to the landmark chain, one per landmark.
///
/// The normal at landmark `i` is perpendicular to the chord from `i-1` to
/// `i+1` (wrapping when `closed`; endpoints of open chains use their single
/// adjacent edge) and points to the left of the traversal direction.
pub fn estimate_normals(
    shape: &[Point],
    closed: bool,
) -> Result<Vec<Vector2<f64>>, MorphError> {
    let n = shape.len();
    if n < 3 {
        return Err(MorphError::DegenerateShape(format!(
            "normal estimation needs at least 3 landmarks, got {n}"
        )));
    }
    (0..n)
        .map(|i| {
            let (prev, next) = if closed {
                (shape[(i + n - 1) % n], shape[(i + 1) % n])
            } else if i == 0 {
                (shape[0], shape[1])
            } else if i == n - 1 {
                (shape[n - 2], shape[n - 1])
            } else {
                (shape[i - 1], shape[i + 1])
            };
            let chord = next - prev;
            let len = chord.norm();
            if len == 0.0 {
                return Err(MorphError::DegenerateShape(format!(
                    "zero-length chord at landmark {i}"
                )));
            }
            Ok(Vector2::new(-chord.y, chord.x) / len)
        })
        .collect()
}

/// Move a landmark to the highest-confidence sample on its normal line.
///
/// Samples lie at `point + k*step*normal` for `k = -K..=K` with
/// `K = floor(half_length / step)`; positions outside the map read as 0.
/// Ties prefer the smallest `|k|`, then the negative side.
pub fn profile_search(
    map: &ConfidenceMap,
    point: Point,
    normal: Vector2<f64>,
    half_length: f64,
    step: f64,
) -> Point {
    assert!(half_length > 0.0 && step > 0.0, "profile extents must be positive");
    let k_max = (half_length / step).floor() as i64;
    let mut best_point = point;
    let mut best_value = f64::NEG_INFINITY;
    // Visit offsets in tie-break priority order: 0, -1, +1, -2, +2, ...
    for magnitude in 0..=k_max {
        for k in [-magnitude, magnitude] {
            if magnitude == 0 && k == 0 && best_value > f64::NEG_INFINITY {
                continue;
            }
            let candidate = point + normal * (k as f64 * step);
            let value = map.sample_bilinear(candidate.x, candidate.y);
            if value > best_value {
                best_value = value;
                best_point = candidate;
            }
        }
    }
    best_point
}

/// Pull a proposed landmark set back onto the model manifold.
///
/// Steps: fit a similarity pose from the model mean to the proposal, remove
/// it, project onto the modes, clamp the coefficients to three standard
/// deviations, rebuild, and restore the pose. The pose fit may include a
/// reflection so mirrored placements survive the constraint.
pub fn constrain_shape(
    model: &PointDistributionModel,
    proposed: &[Point],
) -> Result<ShapeInstance, MorphError> {
    if proposed.len() != model.n_landmarks() {
        return Err(MorphError::ShapeMismatch {
            expected: model.n_landmarks(),
            actual: proposed.len(),
        });
    }
    let mean = model.mean_shape();
    let pose = similarity_procrustes(
        &mean,
        proposed,
        None,
        ProcrustesOptions {
            allow_reflection: true,
            estimate_scale: true,
        },
    )
    .map_err(|e| MorphError::DegenerateShape(e.to_string()))?;
    let in_model_frame = pose.inverse().apply_all(proposed);
    let raw = project_or_mismatch(model, &in_model_frame)?;
    let coefficients = model
        .constrain(&raw)
        .expect("projection output length matches the mode count");
    let reconstructed = model
        .reconstruct(&coefficients)
        .expect("constrained coefficients keep the mode count");
    Ok(ShapeInstance {
        points: pose.apply_all(&reconstructed),
        pose,
        coefficients,
    })
}

fn project_or_mismatch(
    model: &PointDistributionModel,
    shape: &[Point],
) -> Result<Vec<f64>, MorphError> {
    model.project(shape).map_err(|e| match e {
        PdmError::ShapeMismatch { expected, actual } => {
            MorphError::ShapeMismatch { expected, actual }
        }
        other => MorphError::DegenerateShape(other.to_string()),
    })
}

/// Fit the model to a confidence map: initialize the pose on the thresholded
/// foreground, then repeat profile search along landmark normals followed by
/// the shape constraint, until the mean landmark movement falls below
/// `config.convergence_tolerance` or `config.max_iterations` is reached.
///
/// The search reads the continuous confidence values; thresholding is used
/// only for initialization.
pub fn fit_shape(
    model: &PointDistributionModel,
    map: &ConfidenceMap,
    config: &MorphConfig,
) -> Result<FitResult, MorphError> {
    let mut instance = initialize_shape(model, map, config)?;
    let mut movements = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;

    for _ in 0..config.max_iterations {
        let normals = estimate_normals(&instance.points, config.closed)?;
        let proposed: Vec<Point> = instance
            .points
            .iter()
            .zip(&normals)
            .map(|(&p, &n)| {
                profile_search(map, p, n, config.profile_half_length, config.profile_step)
            })
            .collect();
        let constrained = constrain_shape(model, &proposed)?;
        let movement = instance
            .points
            .iter()
            .zip(&constrained.points)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / instance.points.len() as f64;
        instance = constrained;
        iterations_used += 1;
        movements.push(movement);
        if movement < config.convergence_tolerance {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        shape: instance,
        iterations_used,
        converged,
        per_iteration_movement: movements,
    })
}
