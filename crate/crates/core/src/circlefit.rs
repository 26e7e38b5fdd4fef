//! Circle estimation from scattered points and from confidence maps.
//!
//! Two estimators are provided: a closed-form least-squares fit on the
//! algebraic circle equation, and an iteratively damped Gauss-Newton
//! refinement of the exact geometric distances. Detection from a confidence
//! map thresholds the map, gates on the foreground count, and fits the
//! surviving pixels.

use nalgebra::{Matrix2, Matrix3, Vector3};
use thiserror::Error;

use crate::confmap::ConfidenceMap;
use crate::geometry::{Circle, Point};

#[derive(Debug, Error)]
pub enum CircleFitError {
    #[error("need at least 3 non-collinear points, got {n} with spread ratio {ratio:.3e}")]
    DegenerateInput { n: usize, ratio: f64 },
    #[error("algebraic solution has no real radius (radicand {0:.3e})")]
    NoRealCircle(f64),
    #[error("no strict cost decrease within {iterations} iterations; best cost {cost:.6e}")]
    NonConvergence {
        best: Circle,
        cost: f64,
        iterations: usize,
    },
}

/// Controls for the damped Gauss-Newton refinement.
#[derive(Debug, Clone, Copy)]
pub struct GeometricFitConfig {
    pub max_iterations: usize,
    /// Declare convergence when the parameter step norm falls below this.
    pub step_tolerance: f64,
    /// Initial damping factor; divided by 10 on accepted steps, multiplied
    /// by 10 on rejected ones.
    pub damping_init: f64,
}

impl Default for GeometricFitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-8,
            damping_init: 1e-3,
        }
    }
}

/// Result of a geometric refinement.
#[derive(Debug, Clone, Copy)]
pub struct GeometricFit {
    pub circle: Circle,
    /// Sum of squared point-to-outline distances at the final iterate.
    pub cost: f64,
    pub iterations: usize,
}

/// Sum of squared distances from each point to the circle outline.
pub fn circle_cost(points: &[Point], circle: &Circle) -> f64 {
    points
        .iter()
        .map(|p| {
            let d = (p - circle.center()).norm() - circle.r;
            d * d
        })
        .sum()
}

/// Singular values (max, min) of the centroid-centered Nx2 point matrix.
fn centered_spread(points: &[Point], mean: &Point) -> (f64, f64) {
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eigen = cov.symmetric_eigen();
    let l0 = eigen.eigenvalues[0].max(0.0);
    let l1 = eigen.eigenvalues[1].max(0.0);
    (l0.max(l1).sqrt(), l0.min(l1).sqrt())
}

fn check_degeneracy(points: &[Point]) -> Result<Point, CircleFitError> {
    let n = points.len();
    let degenerate = |ratio| CircleFitError::DegenerateInput { n, ratio };
    if n < 3 {
        return Err(degenerate(0.0));
    }
    let mean = Point::from(
        points.iter().map(|p| p.coords).sum::<nalgebra::Vector2<f64>>() / n as f64,
    );
    let (s_max, s_min) = centered_spread(points, &mean);
    if s_max == 0.0 || s_min < 1e-10 * s_max {
        return Err(degenerate(if s_max == 0.0 { 0.0 } else { s_min / s_max }));
    }
    Ok(mean)
}

/// Closed-form least-squares circle through `points`.
///
/// Minimizes the residuals of `x^2 + y^2 + B*x + C*y + D = 0` over `(B, C, D)`
/// and converts to center/radius form. Points are centered on their centroid
/// and scaled to unit RMS spread first, which makes the fit exactly
/// translation-equivariant and keeps the normal equations well conditioned.
pub fn algebraic_fit(points: &[Point]) -> Result<Circle, CircleFitError> {
    let mean = check_degeneracy(points)?;
    let n = points.len() as f64;
    let rms = (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt();

    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in points {
        let x = (p.x - mean.x) / rms;
        let y = (p.y - mean.y) / rms;
        let row = Vector3::new(x, y, 1.0);
        let rhs = -(x * x + y * y);
        ata += row * row.transpose();
        atb += row * rhs;
    }
    let coeffs = ata
        .lu()
        .solve(&atb)
        .ok_or(CircleFitError::DegenerateInput {
            n: points.len(),
            ratio: 0.0,
        })?;
    let (b, c, d) = (coeffs[0], coeffs[1], coeffs[2]);
    let radicand = b * b / 4.0 + c * c / 4.0 - d;
    if radicand <= 0.0 {
        return Err(CircleFitError::NoRealCircle(radicand));
    }
    Ok(Circle {
        cx: mean.x + rms * (-b / 2.0),
        cy: mean.y + rms * (-c / 2.0),
        r: rms * radicand.sqrt(),
    })
}

/// Refine `init` by damped Gauss-Newton on the exact geometric residuals
/// `|p - center| - r`.
///
/// Steps that do not strictly decrease the cost (or would drive the radius
/// non-positive) are rejected and retried with ten times the damping.
/// Convergence is declared once the proposed step norm drops below
/// `step_tolerance`. If the iteration budget runs out first, the best iterate
/// is reported inside [`CircleFitError::NonConvergence`].
pub fn geometric_fit(
    points: &[Point],
    init: &Circle,
    config: &GeometricFitConfig,
) -> Result<GeometricFit, CircleFitError> {
    check_degeneracy(points)?;
    let mut circle = *init;
    let mut cost = circle_cost(points, &circle);
    let mut damping = config.damping_init;

    for iteration in 0..config.max_iterations {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for p in points {
            let offset = p - circle.center();
            let dist = offset.norm();
            let residual = dist - circle.r;
            let (dx, dy) = if dist > 0.0 {
                (-offset.x / dist, -offset.y / dist)
            } else {
                (0.0, 0.0)
            };
            let row = Vector3::new(dx, dy, -1.0);
            jtj += row * row.transpose();
            jtr += row * residual;
        }

        loop {
            let damped = jtj + Matrix3::identity() * damping;
            let step = match damped.lu().solve(&(-jtr)) {
                Some(s) => s,
                None => {
                    damping *= 10.0;
                    continue;
                }
            };
            if step.norm() < config.step_tolerance {
                return Ok(GeometricFit {
                    circle,
                    cost,
                    iterations: iteration,
                });
            }
            let candidate = Circle {
                cx: circle.cx + step[0],
                cy: circle.cy + step[1],
                r: circle.r + step[2],
            };
            if candidate.r > 0.0 {
                let candidate_cost = circle_cost(points, &candidate);
                if candidate_cost < cost {
                    circle = candidate;
                    cost = candidate_cost;
                    damping = (damping / 10.0).max(1e-15);
                    break;
                }
            }
            damping *= 10.0;
            if damping > 1e12 {
                return Err(CircleFitError::NonConvergence {
                    best: circle,
                    cost,
                    iterations: iteration,
                });
            }
        }
    }

    Err(CircleFitError::NonConvergence {
        best: circle,
        cost,
        iterations: config.max_iterations,
    })
}

/// Which estimator produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Algebraic,
    Geometric,
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitMethod::Algebraic => "algebraic",
            FitMethod::Geometric => "geometric",
        })
    }
}

impl std::str::FromStr for FitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "algebraic" => Ok(FitMethod::Algebraic),
            "geometric" => Ok(FitMethod::Geometric),
            other => Err(format!(
                "unknown method `{other}`; expected `algebraic` or `geometric`"
            )),
        }
    }
}

/// Controls for circle detection from a confidence map.
#[derive(Debug, Clone, Copy)]
pub struct DetectionConfig {
    /// Foreground threshold; pixels strictly above it are kept.
    pub tau: f64,
    /// Minimum number of foreground pixels required to attempt a fit.
    pub min_foreground: usize,
    pub method: FitMethod,
    pub geometric: GeometricFitConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            min_foreground: 100,
            method: FitMethod::Algebraic,
            geometric: GeometricFitConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("{found} foreground pixels above tau={tau}, fewer than the required {required}")]
    TooFewForeground {
        found: usize,
        required: usize,
        tau: f64,
    },
    #[error("circle fit failed: {0}")]
    Fit(#[from] CircleFitError),
}

/// A circle detection with its provenance.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub circle: Circle,
    pub method: FitMethod,
    pub n_foreground: usize,
    /// Sum of squared point-to-outline distances over the foreground pixels.
    pub cost: f64,
}

/// Threshold `map` at `config.tau`, gate on the foreground count, and fit a
/// circle to the foreground pixel coordinates.
///
/// The geometric method starts from the algebraic solution; if it stops
/// without meeting the step tolerance, the best iterate found is still
/// reported rather than discarded.
pub fn detect_circle(
    map: &ConfidenceMap,
    config: &DetectionConfig,
) -> Result<Detection, DetectionError> {
    let foreground = map.threshold_foreground(config.tau);
    if foreground.len() < config.min_foreground {
        return Err(DetectionError::TooFewForeground {
            found: foreground.len(),
            required: config.min_foreground,
            tau: config.tau,
        });
    }
    let algebraic = algebraic_fit(&foreground)?;
    let (circle, cost) = match config.method {
        FitMethod::Algebraic => (algebraic, circle_cost(&foreground, &algebraic)),
        FitMethod::Geometric => match geometric_fit(&foreground, &algebraic, &config.geometric) {
            Ok(fit) => (fit.circle, fit.cost),
            Err(CircleFitError::NonConvergence { best, cost, .. }) => (best, cost),
            Err(other) => return Err(other.into()),
        },
    };
    Ok(Detection {
        circle,
        method: config.method,
        n_foreground: foreground.len(),
        cost,
    })
}
