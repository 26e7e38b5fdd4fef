//! 2D similarity transforms and weighted Procrustes alignment.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("linear part is singular or non-finite")]
    DegenerateLinearPart,
    #[error("point sets have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 point pairs, got {0}")]
    TooFewPoints(usize),
    #[error("weights must be non-negative with a positive sum")]
    InvalidWeights,
    #[error("source points are coincident; alignment is underdetermined")]
    DegenerateSource,
    #[error("best-fit scale is not positive; target spread vanishes")]
    NonPositiveScale,
}

/// Rigid-plus-scale map `p ↦ s·R·F·p + t`, where `R` is the rotation by
/// `rotation` radians, `F` flips the y axis when `reflected` is set, and
/// `t = (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform2D {
    /// Rotation angle in radians, normalized to `(-pi, pi]`.
    pub rotation: f64,
    /// Isotropic scale factor, strictly positive.
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    /// Whether a y-axis flip is applied before the rotation.
    pub reflected: bool,
}

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

impl SimilarityTransform2D {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            scale: 1.0,
            tx: 0.0,
            ty: 0.0,
            reflected: false,
        }
    }

    pub fn new(
        rotation: f64,
        scale: f64,
        tx: f64,
        ty: f64,
        reflected: bool,
    ) -> Result<Self, TransformError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(TransformError::InvalidScale(scale));
        }
        Ok(Self {
            rotation: normalize_angle(rotation),
            scale,
            tx,
            ty,
            reflected,
        })
    }

    /// The 2x2 linear part `s·R·F`.
    pub fn linear(&self) -> Matrix2<f64> {
        let (sin, cos) = self.rotation.sin_cos();
        let rot = Matrix2::new(cos, -sin, sin, cos);
        let flip = if self.reflected {
            Matrix2::new(1.0, 0.0, 0.0, -1.0)
        } else {
            Matrix2::identity()
        };
        rot * flip * self.scale
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.tx, self.ty)
    }

    /// Recover the parameters from a linear part and translation. The linear
    /// part must be a scaled orthogonal matrix.
    pub fn from_parts(linear: Matrix2<f64>, translation: Vector2<f64>) -> Result<Self, TransformError> {
        let det = linear.determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(TransformError::DegenerateLinearPart);
        }
        let reflected = det < 0.0;
        let scale = det.abs().sqrt();
        let mut rot = linear / scale;
        if reflected {
            // Undo the y flip to isolate the rotation.
            rot.column_mut(1).neg_mut();
        }
        let rotation = rot[(1, 0)].atan2(rot[(0, 0)]);
        Self::new(rotation, scale, translation.x, translation.y, reflected)
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.linear() * p.coords + self.translation())
    }

    pub fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        let linear = self.linear();
        let t = self.translation();
        points
            .iter()
            .map(|p| Point::from(linear * p.coords + t))
            .collect()
    }

    /// The transform equivalent to applying `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        let linear = self.linear() * inner.linear();
        let translation = self.linear() * inner.translation() + self.translation();
        Self::from_parts(linear, translation)
            .expect("composition of similarity transforms is a similarity transform")
    }

    pub fn inverse(&self) -> Self {
        let inv_linear = self
            .linear()
            .try_inverse()
            .expect("similarity transforms are invertible");
        let translation = -(inv_linear * self.translation());
        Self::from_parts(inv_linear, translation)
            .expect("inverse of a similarity transform is a similarity transform")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProcrustesOptions {
    /// Allow the fitted map to include a reflection when it lowers the error.
    pub allow_reflection: bool,
    /// Estimate the scale factor; if false the scale is fixed at 1.
    pub estimate_scale: bool,
}

impl Default for ProcrustesOptions {
    fn default() -> Self {
        Self {
            allow_reflection: false,
            estimate_scale: true,
        }
    }
}

/// Least-squares similarity transform mapping `source` onto `target`,
/// optionally weighted per point pair.
pub fn similarity_procrustes(
    source: &[Point],
    target: &[Point],
    weights: Option<&[f64]>,
    options: ProcrustesOptions,
) -> Result<SimilarityTransform2D, TransformError> {
    let n = source.len();
    if n != target.len() {
        return Err(TransformError::LengthMismatch(n, target.len()));
    }
    if n < 2 {
        return Err(TransformError::TooFewPoints(n));
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(TransformError::LengthMismatch(n, w.len()));
            }
            if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(TransformError::InvalidWeights);
            }
            let sum: f64 = w.iter().sum();
            if sum <= 0.0 {
                return Err(TransformError::InvalidWeights);
            }
            w.iter().map(|&x| x / sum).collect()
        }
        None => vec![1.0 / n as f64; n],
    };

    let mut src_mean = Vector2::zeros();
    let mut tgt_mean = Vector2::zeros();
    for i in 0..n {
        src_mean += weights[i] * source[i].coords;
        tgt_mean += weights[i] * target[i].coords;
    }

    // Weighted cross-covariance (target x source) and source spread.
    let mut cross = Matrix2::zeros();
    let mut src_var = 0.0;
    for i in 0..n {
        let p = source[i].coords - src_mean;
        let q = target[i].coords - tgt_mean;
        cross += weights[i] * q * p.transpose();
        src_var += weights[i] * p.norm_squared();
    }
    if src_var <= 0.0 {
        return Err(TransformError::DegenerateSource);
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("2x2 SVD with u requested");
    let v_t = svd.v_t.expect("2x2 SVD with v_t requested");
    let orthogonal = if options.allow_reflection || (u * v_t).determinant() > 0.0 {
        u * v_t
    } else {
        u * Matrix2::new(1.0, 0.0, 0.0, -1.0) * v_t
    };

    let scale = if options.estimate_scale {
        (orthogonal.transpose() * cross).trace() / src_var
    } else {
        1.0
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(TransformError::NonPositiveScale);
    }

    let translation = tgt_mean - orthogonal * src_mean * scale;
    SimilarityTransform2D::from_parts(orthogonal * scale, translation)
}
