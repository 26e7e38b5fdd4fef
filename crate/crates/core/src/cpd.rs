//! Point-cloud registration by expectation-maximization over a Gaussian
//! mixture with a uniform outlier component.
//!
//! The source points act as mixture centroids and are moved by a similarity
//! transform; the target points are the observations. Restarting from several
//! initial rotations (and optionally a reflection) makes the registration
//! robust to large pose differences, which plain EM cannot cross.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Point;
use crate::transform::SimilarityTransform2D;

#[derive(Debug, Error)]
pub enum CpdError {
    #[error("degenerate registration input: {0}")]
    DegenerateInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all {0} restarts failed to register")]
    RegistrationFailed(usize),
}

/// Free parameters of the EM registration.
#[derive(Debug, Clone, Copy)]
pub struct CpdConfig {
    /// Prior mass of the uniform outlier component, in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Stop once the shared variance changes by less than this between
    /// iterations.
    pub sigma_tolerance: f64,
    /// Estimate an isotropic scale in the M-step; if false the scale stays 1.
    pub estimate_scale: bool,
    /// Targets larger than this are deterministically subsampled before EM.
    pub max_target_points: usize,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            outlier_weight: 0.1,
            max_iterations: 150,
            sigma_tolerance: 1e-8,
            estimate_scale: true,
            max_target_points: 5000,
        }
    }
}

/// Outcome of one registration.
#[derive(Debug, Clone)]
pub struct CpdResult {
    pub transform: SimilarityTransform2D,
    /// `N x M` posterior matrix: entry `(n, m)` is the probability that
    /// target point `m` was generated by source point `n`. Column sums fall
    /// short of 1 by the outlier mass. `M` refers to the (possibly
    /// subsampled) target actually used.
    pub posteriors: DMatrix<f64>,
    pub final_sigma2: f64,
    /// Negative log-likelihood of the target under the final mixture.
    pub objective: f64,
    /// Objective before each M-step and after the last one; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

const SIGMA2_FLOOR: f64 = 1e-12;

fn validate_config(config: &CpdConfig) -> Result<(), CpdError> {
    if !(0.0..1.0).contains(&config.outlier_weight) {
        return Err(CpdError::InvalidConfig(format!(
            "outlier_weight must be in [0, 1), got {}",
            config.outlier_weight
        )));
    }
    if config.max_iterations == 0 {
        return Err(CpdError::InvalidConfig("max_iterations must be >= 1".into()));
    }
    if !(config.sigma_tolerance > 0.0) {
        return Err(CpdError::InvalidConfig(format!(
            "sigma_tolerance must be positive, got {}",
            config.sigma_tolerance
        )));
    }
    Ok(())
}

fn check_cloud(points: &[Point], name: &str) -> Result<(), CpdError> {
    if points.len() < 2 {
        return Err(CpdError::DegenerateInput(format!(
            "{name} needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(CpdError::DegenerateInput(format!(
            "{name} points are all coincident"
        )));
    }
    Ok(())
}

/// Evenly spaced subsample of at most `limit` points, keeping order.
fn subsample(points: &[Point], limit: usize) -> Vec<Point> {
    if points.len() <= limit {
        return points.to_vec();
    }
    (0..limit)
        .map(|j| points[j * points.len() / limit])
        .collect()
}

/// Zero-mean, unit-RMS frame for one cloud. EM runs on normalized
/// coordinates so the outlier component keeps the same meaning at any data
/// scale; the result is mapped back afterwards.
struct Normalization {
    center: Vector2<f64>,
    scale: f64,
}

impl Normalization {
    fn fit(points: &[Point], name: &str) -> Result<Self, CpdError> {
        let center = points.iter().map(|p| p.coords).sum::<Vector2<f64>>() / points.len() as f64;
        let scale = (points
            .iter()
            .map(|p| (p.coords - center).norm_squared())
            .sum::<f64>()
            / points.len() as f64)
            .sqrt();
        if !(scale > 0.0) {
            return Err(CpdError::DegenerateInput(format!(
                "{name} points are all coincident"
            )));
        }
        Ok(Self { center, scale })
    }

    fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        points
            .iter()
            .map(|p| Point::from((p.coords - self.center) / self.scale))
            .collect()
    }
}

/// `log(exp(a) + exp(b))` without overflow; either side may be `-inf`.
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

struct EStep {
    posteriors: DMatrix<f64>,
    objective: f64,
}

/// Posterior responsibilities and the mixture negative log-likelihood for
/// the current source placement.
fn e_step(moved: &[Point], target: &[Point], sigma2: f64, outlier_weight: f64) -> EStep {
    let n = moved.len();
    let m = target.len();
    let log_norm = (1.0 - outlier_weight).ln()
        - (n as f64).ln()
        - (2.0 * std::f64::consts::PI * sigma2).ln();
    let log_outlier = if outlier_weight > 0.0 {
        outlier_weight.ln() - (m as f64).ln()
    } else {
        f64::NEG_INFINITY
    };

    let mut posteriors = DMatrix::zeros(n, m);
    let mut objective = 0.0;
    let mut z = vec![0.0f64; n];
    for (col, x) in target.iter().enumerate() {
        let mut z_max = f64::NEG_INFINITY;
        for (row, y) in moved.iter().enumerate() {
            let zi = -(x - y).norm_squared() / (2.0 * sigma2);
            z[row] = zi;
            if zi > z_max {
                z_max = zi;
            }
        }
        let mut sum = 0.0;
        for zi in &z {
            sum += (zi - z_max).exp();
        }
        objective -= log_add(log_norm + z_max + sum.ln(), log_outlier);

        // Outlier term rescaled into the same shifted frame as `sum`.
        let shifted_outlier = log_outlier - log_norm - z_max;
        if shifted_outlier > 700.0 {
            continue; // outlier component takes essentially all the mass
        }
        let denom = sum + shifted_outlier.exp();
        let mut column = posteriors.column_mut(col);
        for (row, zi) in z.iter().enumerate() {
            column[row] = (zi - z_max).exp() / denom;
        }
    }
    EStep {
        posteriors,
        objective,
    }
}

/// Register `source` onto `target` with EM, starting from the identity pose.
///
/// Both clouds are first normalized to zero mean and unit RMS radius (EM in
/// raw pixel units lets the uniform outlier component swallow the cloud's
/// extremities); the reported transform, variance, and objective are mapped
/// back to target units. Each M-step solves the posterior-weighted similarity
/// alignment in closed form (rotation from the SVD of the 2x2
/// cross-covariance, optional scale, translation) and refreshes the shared
/// variance. Iteration stops when the variance settles to within
/// `sigma_tolerance`, collapses to the 1e-12 floor, or the iteration budget
/// is spent.
pub fn cpd_register(
    source: &[Point],
    target: &[Point],
    config: &CpdConfig,
) -> Result<CpdResult, CpdError> {
    validate_config(config)?;
    check_cloud(source, "source")?;
    check_cloud(target, "target")?;
    let target = subsample(target, config.max_target_points);
    let norm_src = Normalization::fit(source, "source")?;
    let norm_tgt = Normalization::fit(&target, "target")?;
    let source_n = norm_src.apply_all(source);
    let target_n = norm_tgt.apply_all(&target);
    // With estimate_scale off the output scale must stay exactly 1, which in
    // normalized coordinates is this ratio.
    let pinned_scale = norm_src.scale / norm_tgt.scale;
    let n = source_n.len();
    let m = target_n.len();

    let mut sigma2 = source_n
        .iter()
        .map(|y| {
            target_n
                .iter()
                .map(|x| (x - y).norm_squared())
                .sum::<f64>()
        })
        .sum::<f64>()
        / (2 * n * m) as f64;
    sigma2 = sigma2.max(SIGMA2_FLOOR);

    let mut transform = SimilarityTransform2D::identity();
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        let moved = transform.apply_all(&source_n);
        let e = e_step(&moved, &target_n, sigma2, config.outlier_weight);
        trace.push(e.objective);

        let p = &e.posteriors;
        let mass: f64 = p.sum();
        if mass <= f64::MIN_POSITIVE {
            break; // every observation is explained by the outlier component
        }

        // Posterior-weighted means of both clouds.
        let mut tgt_mean = Vector2::zeros();
        let mut src_mean = Vector2::zeros();
        for col in 0..m {
            let col_sum: f64 = p.column(col).sum();
            tgt_mean += col_sum * target_n[col].coords;
        }
        for row in 0..n {
            let row_sum: f64 = p.row(row).sum();
            src_mean += row_sum * source_n[row].coords;
        }
        tgt_mean /= mass;
        src_mean /= mass;

        // Weighted cross-covariance (target x source) and source spread.
        let mut cross = Matrix2::zeros();
        let mut src_var = 0.0;
        for row in 0..n {
            let y = source_n[row].coords - src_mean;
            let mut weighted_x = Vector2::zeros();
            let mut row_sum = 0.0;
            for col in 0..m {
                let w = p[(row, col)];
                if w > 0.0 {
                    weighted_x += w * target_n[col].coords;
                    row_sum += w;
                }
            }
            cross += (weighted_x - row_sum * tgt_mean) * y.transpose();
            src_var += row_sum * y.norm_squared();
        }

        let svd = cross.svd(true, true);
        let u = svd.u.expect("2x2 SVD with u requested");
        let v_t = svd.v_t.expect("2x2 SVD with v_t requested");
        let rotation = if (u * v_t).determinant() > 0.0 {
            u * v_t
        } else {
            u * Matrix2::new(1.0, 0.0, 0.0, -1.0) * v_t
        };
        let scale = if config.estimate_scale {
            if src_var > 0.0 {
                ((rotation.transpose() * cross).trace() / src_var).max(SIGMA2_FLOOR)
            } else {
                1.0
            }
        } else {
            pinned_scale
        };
        let translation = tgt_mean - rotation * src_mean * scale;
        transform = SimilarityTransform2D::from_parts(rotation * scale, translation)
            .map_err(|e| CpdError::DegenerateInput(e.to_string()))?;
        iterations += 1;

        // Exact variance update under the new transform.
        let moved = transform.apply_all(&source_n);
        let mut weighted_sq = 0.0;
        for row in 0..n {
            for col in 0..m {
                let w = p[(row, col)];
                if w > 0.0 {
                    weighted_sq += w * (target_n[col] - moved[row]).norm_squared();
                }
            }
        }
        let new_sigma2 = (weighted_sq / (2.0 * mass)).max(SIGMA2_FLOOR);
        let delta = (new_sigma2 - sigma2).abs();
        sigma2 = new_sigma2;
        if sigma2 <= SIGMA2_FLOOR || delta < config.sigma_tolerance {
            break;
        }
    }

    let moved = transform.apply_all(&source_n);
    let e = e_step(&moved, &target_n, sigma2, config.outlier_weight);
    trace.push(e.objective);

    // Map everything back to target units. Densities shrink by the squared
    // target scale, shifting every log-likelihood by the same constant.
    let linear = transform.linear() * (norm_tgt.scale / norm_src.scale);
    let translation = norm_tgt.center + norm_tgt.scale * transform.translation()
        - linear * norm_src.center;
    let transform = SimilarityTransform2D::from_parts(linear, translation)
        .map_err(|e| CpdError::DegenerateInput(e.to_string()))?;
    let shift = m as f64 * norm_tgt.scale.powi(2).ln();
    Ok(CpdResult {
        transform,
        posteriors: e.posteriors,
        final_sigma2: sigma2 * norm_tgt.scale.powi(2),
        objective: e.objective + shift,
        objective_trace: trace.into_iter().map(|v| v + shift).collect(),
        iterations,
    })
}

/// Rotation (and optional reflection) of the source about its centroid, used
/// as a restart pose.
fn restart_pose(source: &[Point], rotation: f64, reflected: bool) -> SimilarityTransform2D {
    let centroid = source
        .iter()
        .map(|p| p.coords)
        .sum::<Vector2<f64>>()
        / source.len() as f64;
    let linear = SimilarityTransform2D::new(rotation, 1.0, 0.0, 0.0, reflected)
        .expect("unit scale is valid")
        .linear();
    let translation = centroid - linear * centroid;
    SimilarityTransform2D::from_parts(linear, translation)
        .expect("rotation about a point is a similarity transform")
}

/// Run [`cpd_register`] from `n_rotations` poses uniformly spaced in
/// `[0, 2pi)` (and, when `try_reflection` is set, the same poses with the
/// source reflected), keeping the result with the lowest objective. Ties go
/// to the earliest restart. The restart pose is composed into the reported
/// transform.
pub fn cpd_register_robust(
    source: &[Point],
    target: &[Point],
    config: &CpdConfig,
    n_rotations: usize,
    try_reflection: bool,
) -> Result<CpdResult, CpdError> {
    if n_rotations == 0 {
        return Err(CpdError::InvalidConfig("n_rotations must be >= 1".into()));
    }
    validate_config(config)?;
    check_cloud(source, "source")?;
    check_cloud(target, "target")?;

    let mut poses = Vec::new();
    for reflected in [false, true] {
        if reflected && !try_reflection {
            break;
        }
        for k in 0..n_rotations {
            let angle = std::f64::consts::TAU * k as f64 / n_rotations as f64;
            poses.push(restart_pose(source, angle, reflected));
        }
    }

    let outcomes: Vec<(usize, Result<CpdResult, CpdError>)> = poses
        .par_iter()
        .enumerate()
        .map(|(index, pose)| {
            let posed = pose.apply_all(source);
            let run = cpd_register(&posed, target, config).map(|mut result| {
                result.transform = result.transform.compose(pose);
                result
            });
            (index, run)
        })
        .collect();

    let n_restarts = outcomes.len();
    let best = outcomes
        .into_iter()
        .filter_map(|(index, run)| run.ok().map(|r| (index, r)))
        .min_by(|(ia, a), (ib, b)| {
            a.objective
                .partial_cmp(&b.objective)
                .expect("objectives are finite")
                .then(ia.cmp(ib))
        });
    match best {
        Some((_, result)) => Ok(result),
        None => Err(CpdError::RegistrationFailed(n_restarts)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Asymmetric L-shaped cloud at pixel scale: one long and one short arm,
    /// so a half-turn cannot be absorbed by symmetry.
    fn l_cloud() -> Vec<Point> {
        let mut points = Vec::new();
        for i in 0..20 {
            points.push(Point::new(2.5 * i as f64, (i % 3) as f64 * 0.4));
        }
        for i in 1..9 {
            points.push(Point::new((i % 2) as f64 * 0.3, 4.0 * i as f64));
        }
        points
    }

    fn jitter(points: &[Point], amplitude: f64) -> Vec<Point> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a = ((i * 2654435761) % 997) as f64 / 498.5 - 1.0;
                let b = ((i * 40503 + 7) % 991) as f64 / 495.5 - 1.0;
                Point::new(p.x + amplitude * a, p.y + amplitude * b)
            })
            .collect()
    }

    #[test]
    fn self_registration_is_identity() {
        let cloud = l_cloud();
        let config = CpdConfig {
            outlier_weight: 0.0,
            ..CpdConfig::default()
        };
        let result = cpd_register(&cloud, &cloud, &config).unwrap();
        assert!(result.transform.rotation.abs() < 1e-6);
        assert!((result.transform.scale - 1.0).abs() < 1e-6);
        assert!(result.transform.tx.abs() < 1e-6);
        assert!(result.transform.ty.abs() < 1e-6);
        assert!(!result.transform.reflected);
    }

    #[test]
    fn recovers_moderate_similarity() {
        let source = l_cloud();
        let truth = SimilarityTransform2D::new(30f64.to_radians(), 1.2, 5.0, -3.0, false).unwrap();
        let target = truth.apply_all(&source);
        let result = cpd_register(&source, &target, &CpdConfig::default()).unwrap();
        assert_relative_eq!(result.transform.rotation, truth.rotation, epsilon = 1e-3);
        assert_relative_eq!(result.transform.scale, truth.scale, epsilon = 1e-3);
        assert_relative_eq!(result.transform.tx, truth.tx, epsilon = 1e-3);
        assert_relative_eq!(result.transform.ty, truth.ty, epsilon = 1e-3);
    }

    #[test]
    fn objective_never_increases() {
        let source = l_cloud();
        let truth = SimilarityTransform2D::new(0.4, 0.9, 2.0, 1.0, false).unwrap();
        let target = jitter(&truth.apply_all(&source), 0.3);
        let result = cpd_register(&source, &target, &CpdConfig::default()).unwrap();
        assert!(result.objective_trace.len() >= 2);
        for pair in result.objective_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "objective rose from {} to {}",
                pair[0],
                pair[1]
            );
        }
        assert_relative_eq!(result.objective, *result.objective_trace.last().unwrap());
    }

    #[test]
    fn posterior_columns_account_for_outlier_mass() {
        let source = l_cloud();
        let target = jitter(&source, 0.2);
        let result = cpd_register(&source, &target, &CpdConfig::default()).unwrap();
        for col in 0..result.posteriors.ncols() {
            let sum: f64 = result.posteriors.column(col).sum();
            assert!(sum <= 1.0 + 1e-9, "column {col} sums to {sum}");
        }

        let no_outliers = CpdConfig {
            outlier_weight: 0.0,
            ..CpdConfig::default()
        };
        let result = cpd_register(&source, &target, &no_outliers).unwrap();
        for col in 0..result.posteriors.ncols() {
            let sum: f64 = result.posteriors.column(col).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn half_turn_defeats_plain_registration_but_not_restarts() {
        let source = l_cloud();
        let truth =
            SimilarityTransform2D::new(std::f64::consts::PI, 1.0, 3.0, -2.0, false).unwrap();
        let target = truth.apply_all(&source);

        let plain = cpd_register(&source, &target, &CpdConfig::default()).unwrap();
        let robust =
            cpd_register_robust(&source, &target, &CpdConfig::default(), 8, false).unwrap();

        assert_relative_eq!(
            robust.transform.rotation.abs(),
            std::f64::consts::PI,
            epsilon = 1e-2
        );
        assert!(plain.objective > 10.0 * robust.objective);
        assert!(robust.objective <= plain.objective + 1e-9);
        // Plain EM stays in the wrong basin: its rotation is far from a
        // half turn.
        assert!((plain.transform.rotation.abs() - std::f64::consts::PI).abs() > 0.5);
    }

    #[test]
    fn reflection_restart_recovers_mirrored_target() {
        let source = l_cloud();
        let truth = SimilarityTransform2D::new(0.0, 1.0, 0.0, 0.0, true).unwrap();
        let target = truth.apply_all(&source);

        let result =
            cpd_register_robust(&source, &target, &CpdConfig::default(), 8, true).unwrap();
        assert!(result.transform.reflected);

        let baseline =
            cpd_register_robust(&source, &source, &CpdConfig::default(), 8, true).unwrap();
        assert_relative_eq!(result.objective, baseline.objective, epsilon = 1e-3);
    }

    #[test]
    fn single_restart_equals_plain_registration() {
        let source = l_cloud();
        let truth = SimilarityTransform2D::new(0.2, 1.1, 1.0, 2.0, false).unwrap();
        let target = truth.apply_all(&source);
        let plain = cpd_register(&source, &target, &CpdConfig::default()).unwrap();
        let robust =
            cpd_register_robust(&source, &target, &CpdConfig::default(), 1, false).unwrap();
        assert_eq!(robust.objective, plain.objective);
        assert_relative_eq!(robust.transform.rotation, plain.transform.rotation, epsilon = 1e-12);
        assert_relative_eq!(robust.transform.scale, plain.transform.scale, epsilon = 1e-12);
        assert_relative_eq!(robust.transform.tx, plain.transform.tx, epsilon = 1e-12);
        assert_relative_eq!(robust.transform.ty, plain.transform.ty, epsilon = 1e-12);
    }

    #[test]
    fn registration_commutes_with_target_motion() {
        let source = l_cloud();
        let base_truth = SimilarityTransform2D::new(0.3, 1.1, 4.0, -1.0, false).unwrap();
        let target = base_truth.apply_all(&source);
        let g = SimilarityTransform2D::new(0.25, 0.9, -6.0, 2.0, false).unwrap();
        let moved_target = g.apply_all(&target);

        let t1 = cpd_register(&source, &target, &CpdConfig::default())
            .unwrap()
            .transform;
        let t2 = cpd_register(&source, &moved_target, &CpdConfig::default())
            .unwrap()
            .transform;
        let expected = g.compose(&t1);
        assert_relative_eq!(t2.rotation, expected.rotation, epsilon = 1e-3);
        assert_relative_eq!(t2.scale, expected.scale, epsilon = 1e-3);
        assert_relative_eq!(t2.tx, expected.tx, epsilon = 1e-3);
        assert_relative_eq!(t2.ty, expected.ty, epsilon = 1e-3);
    }

    #[test]
    fn oversized_targets_are_subsampled() {
        let source: Vec<Point> = (0..8)
            .map(|i| {
                let theta = std::f64::consts::TAU * i as f64 / 8.0;
                Point::new(20.0 * theta.cos(), 20.0 * theta.sin())
            })
            .collect();
        let target: Vec<Point> = (0..12000)
            .map(|i| {
                let theta = std::f64::consts::TAU * i as f64 / 12000.0;
                Point::new(20.0 * theta.cos() + 1.0, 20.0 * theta.sin() - 2.0)
            })
            .collect();
        let result = cpd_register(&source, &target, &CpdConfig::default()).unwrap();
        assert_eq!(result.posteriors.ncols(), 5000);
        assert_eq!(result.posteriors.nrows(), 8);
        assert_relative_eq!(result.transform.tx, 1.0, epsilon = 0.05);
        assert_relative_eq!(result.transform.ty, -2.0, epsilon = 0.05);
    }

    #[test]
    fn degenerate_clouds_are_rejected() {
        let cloud = l_cloud();
        let coincident = vec![Point::new(1.0, 1.0); 10];
        assert!(matches!(
            cpd_register(&coincident, &cloud, &CpdConfig::default()),
            Err(CpdError::DegenerateInput(_))
        ));
        assert!(matches!(
            cpd_register(&cloud, &coincident, &CpdConfig::default()),
            Err(CpdError::DegenerateInput(_))
        ));
        assert!(matches!(
            cpd_register(&cloud[..1].to_vec(), &cloud, &CpdConfig::default()),
            Err(CpdError::DegenerateInput(_))
        ));
        let bad = CpdConfig {
            outlier_weight: 1.0,
            ..CpdConfig::default()
        };
        assert!(matches!(
            cpd_register(&cloud, &cloud, &bad),
            Err(CpdError::InvalidConfig(_))
        ));
    }

    #[test]
    fn transform_application_examples() {
        let identity = SimilarityTransform2D::identity();
        let p = Point::new(2.0, -3.0);
        assert_eq!(identity.apply(&p), p);

        let quarter =
            SimilarityTransform2D::new(std::f64::consts::FRAC_PI_2, 1.0, 0.0, 0.0, false).unwrap();
        let q = quarter.apply(&Point::new(1.0, 0.0));
        assert_relative_eq!(q.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.y, 1.0, epsilon = 1e-12);

        let scaled = SimilarityTransform2D::new(0.0, 2.0, 1.0, 1.0, false).unwrap();
        let r = scaled.apply(&Point::new(3.0, 4.0));
        assert_relative_eq!(r.x, 7.0);
        assert_relative_eq!(r.y, 9.0);
    }
}
