//! Accuracy metrics for fitted circles and landmark sets.

use thiserror::Error;

use crate::geometry::{Circle, Point, Polyline};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot compute a point-to-curve RMSE over an empty point set")]
    EmptyPointSet,
}

/// RMS error of the parameter vector `(cx, cy, r)` between two circles:
/// the Euclidean norm of the difference divided by sqrt(3).
pub fn circle_param_rmse(estimate: &Circle, truth: &Circle) -> f64 {
    let d = [
        estimate.cx - truth.cx,
        estimate.cy - truth.cy,
        estimate.r - truth.r,
    ];
    (d.iter().map(|e| e * e).sum::<f64>() / 3.0).sqrt()
}

/// Root-mean-square of the exact minimal distances from each point to the
/// polyline. Errors on an empty point set rather than returning 0, which
/// would read as a perfect score.
pub fn point_to_curve_rmse(points: &[Point], curve: &Polyline) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let sum_sq: f64 = points
        .iter()
        .map(|p| {
            let d = curve.distance_to(p);
            d * d
        })
        .sum();
    Ok((sum_sq / points.len() as f64).sqrt())
}

/// Keep only the points inside the closed disk of radius `radius` around
/// `center`.
pub fn filter_points_in_disk(points: &[Point], center: Point, radius: f64) -> Vec<Point> {
    points
        .iter()
        .copied()
        .filter(|p| (p - center).norm() <= radius)
        .collect()
}
