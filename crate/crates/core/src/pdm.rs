//! Statistical shape models built from aligned landmark sets.
//!
//! A model holds a mean shape and the leading eigenvectors of the aligned
//! training covariance. Shapes are flattened as `[x0, y0, x1, y1, ...]`.
//! File format `PDM` v1 (plain text): a header line `PDM 1 <N> <M>`, one
//! line with the 2N mean values, one line with the M eigenvalues, then M
//! lines with one 2N mode vector each.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::Point;
use crate::transform::{similarity_procrustes, ProcrustesOptions};

/// An ordered landmark chain treated as a single statistical sample.
pub type ShapeVector = Vec<Point>;

#[derive(Debug, Error)]
pub enum PdmError {
    #[error("shape has {actual} landmarks, model expects {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("coefficient vector has {actual} entries, model has {expected} modes")]
    CoefficientMismatch { expected: usize, actual: usize },
    #[error("shape {index} is degenerate: {reason}")]
    DegenerateShape { index: usize, reason: String },
    #[error("need at least 2 training shapes, got {0}")]
    TooFewShapes(usize),
    #[error("variance fraction must be in (0, 1], got {0}")]
    InvalidVarianceFraction(f64),
    #[error("bad PDM file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn flatten(shape: &[Point]) -> DVector<f64> {
    DVector::from_iterator(shape.len() * 2, shape.iter().flat_map(|p| [p.x, p.y]))
}

fn unflatten(v: &DVector<f64>) -> Vec<Point> {
    v.as_slice()
        .chunks_exact(2)
        .map(|c| Point::new(c[0], c[1]))
        .collect()
}

fn centroid(shape: &[Point]) -> Point {
    Point::from(
        shape.iter().map(|p| p.coords).sum::<nalgebra::Vector2<f64>>() / shape.len() as f64,
    )
}

/// Root sum of squared distances from the landmarks to their centroid.
pub fn centroid_size(shape: &[Point]) -> f64 {
    let c = centroid(shape);
    shape
        .iter()
        .map(|p| (p - c).norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn normalize_shape(shape: &[Point], index: usize) -> Result<Vec<Point>, PdmError> {
    let size = centroid_size(shape);
    if size <= 0.0 {
        return Err(PdmError::DegenerateShape {
            index,
            reason: "all landmarks coincide".into(),
        });
    }
    let c = centroid(shape);
    Ok(shape
        .iter()
        .map(|p| Point::from((p - c) / size))
        .collect())
}

/// Result of generalized Procrustes alignment.
#[derive(Debug, Clone)]
pub struct GpaResult {
    /// Each input shape mapped into the common frame.
    pub aligned: Vec<ShapeVector>,
    /// Consensus shape: zero centroid, unit centroid size.
    pub mean: ShapeVector,
    pub iterations: usize,
}

/// Iteratively align `shapes` to their evolving consensus with similarity
/// transforms (rotation, scale, translation; no reflection). Stops when the
/// consensus moves less than `1e-9` between rounds, or after 50 rounds.
pub fn generalized_procrustes(shapes: &[ShapeVector]) -> Result<GpaResult, PdmError> {
    const MAX_ROUNDS: usize = 50;
    const TOLERANCE: f64 = 1e-9;

    if shapes.len() < 2 {
        return Err(PdmError::TooFewShapes(shapes.len()));
    }
    let n = shapes[0].len();
    for (i, s) in shapes.iter().enumerate() {
        if s.len() != n {
            return Err(PdmError::ShapeMismatch {
                expected: n,
                actual: s.len(),
            });
        }
        if s.len() < 2 {
            return Err(PdmError::DegenerateShape {
                index: i,
                reason: "fewer than 2 landmarks".into(),
            });
        }
    }

    let options = ProcrustesOptions {
        allow_reflection: false,
        estimate_scale: true,
    };
    let mut mean = normalize_shape(&shapes[0], 0)?;
    let mut aligned = shapes.to_vec();
    let mut iterations = 0;

    for round in 0..MAX_ROUNDS {
        iterations = round + 1;
        for (i, shape) in shapes.iter().enumerate() {
            let transform = similarity_procrustes(shape, &mean, None, options).map_err(|e| {
                PdmError::DegenerateShape {
                    index: i,
                    reason: e.to_string(),
                }
            })?;
            aligned[i] = transform.apply_all(shape);
        }
        let mut sum = DVector::zeros(2 * n);
        for s in &aligned {
            sum += flatten(s);
        }
        let raw_mean = unflatten(&(sum / shapes.len() as f64));
        let new_mean = normalize_shape(&raw_mean, usize::MAX).map_err(|_| {
            PdmError::DegenerateShape {
                index: 0,
                reason: "consensus collapsed to a point".into(),
            }
        })?;
        let delta = (flatten(&new_mean) - flatten(&mean)).norm();
        mean = new_mean;
        if delta < TOLERANCE {
            break;
        }
    }

    Ok(GpaResult {
        aligned,
        mean,
        iterations,
    })
}

/// A linear point-distribution model: mean shape plus `M` orthonormal
/// variation modes with their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDistributionModel {
    mean: DVector<f64>,
    eigenvalues: Vec<f64>,
    modes: DMatrix<f64>,
}

impl PointDistributionModel {
    /// Assemble a model from raw parts. `modes` must be `2N x M` with one
    /// mode per column; eigenvalues must be positive and descending.
    pub fn from_parts(
        mean: Vec<Point>,
        eigenvalues: Vec<f64>,
        modes: DMatrix<f64>,
    ) -> Result<Self, PdmError> {
        let dim = mean.len() * 2;
        if mean.len() < 2 {
            return Err(PdmError::DegenerateShape {
                index: 0,
                reason: "mean shape has fewer than 2 landmarks".into(),
            });
        }
        if modes.nrows() != dim || modes.ncols() != eigenvalues.len() {
            return Err(PdmError::BadFormat(format!(
                "mode matrix is {}x{}, expected {}x{}",
                modes.nrows(),
                modes.ncols(),
                dim,
                eigenvalues.len()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0])
            || eigenvalues.iter().any(|&l| !(l.is_finite() && l > 0.0))
        {
            return Err(PdmError::BadFormat(
                "eigenvalues must be positive and non-increasing".into(),
            ));
        }
        Ok(Self {
            mean: flatten(&mean),
            eigenvalues,
            modes,
        })
    }

    pub fn n_landmarks(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean_shape(&self) -> Vec<Point> {
        unflatten(&self.mean)
    }

    /// Per-mode variances, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Mode `i` as a displacement field over the landmarks.
    pub fn mode(&self, i: usize) -> Vec<Point> {
        unflatten(&self.modes.column(i).into_owned())
    }

    /// Coefficients of `shape` in the mode basis: `b_i = p_i . (x - mean)`.
    pub fn project(&self, shape: &[Point]) -> Result<Vec<f64>, PdmError> {
        if shape.len() != self.n_landmarks() {
            return Err(PdmError::ShapeMismatch {
                expected: self.n_landmarks(),
                actual: shape.len(),
            });
        }
        let offset = flatten(shape) - &self.mean;
        Ok((self.modes.transpose() * offset).as_slice().to_vec())
    }

    /// Shape generated by the given mode coefficients.
    pub fn reconstruct(&self, coefficients: &[f64]) -> Result<Vec<Point>, PdmError> {
        if coefficients.len() != self.n_modes() {
            return Err(PdmError::CoefficientMismatch {
                expected: self.n_modes(),
                actual: coefficients.len(),
            });
        }
        let b = DVector::from_column_slice(coefficients);
        Ok(unflatten(&(&self.mean + &self.modes * b)))
    }

    /// Clamp each coefficient into `[-3 sqrt(lambda_i), +3 sqrt(lambda_i)]`.
    pub fn constrain(&self, coefficients: &[f64]) -> Result<Vec<f64>, PdmError> {
        if coefficients.len() != self.n_modes() {
            return Err(PdmError::CoefficientMismatch {
                expected: self.n_modes(),
                actual: coefficients.len(),
            });
        }
        Ok(coefficients
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&b, &l)| {
                let bound = 3.0 * l.sqrt();
                b.clamp(-bound, bound)
            })
            .collect())
    }

    /// Write in `PDM` v1 format with full float precision.
    pub fn save(&self, path: &Path) -> Result<(), PdmError> {
        let mut out = String::new();
        writeln!(out, "PDM 1 {} {}", self.n_landmarks(), self.n_modes())
            .expect("writing to String cannot fail");
        let write_row = |out: &mut String, values: &[f64]| {
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v:.17e}").expect("writing to String cannot fail");
            }
            out.push('\n');
        };
        write_row(&mut out, self.mean.as_slice());
        write_row(&mut out, &self.eigenvalues);
        for i in 0..self.n_modes() {
            write_row(&mut out, self.modes.column(i).as_slice());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Read a `PDM` v1 file.
    pub fn load(path: &Path) -> Result<Self, PdmError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| PdmError::BadFormat("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "PDM" || fields[1] != "1" {
            return Err(PdmError::BadFormat(format!(
                "expected header `PDM 1 <N> <M>`, got `{header}`"
            )));
        }
        let n: usize = fields[2]
            .parse()
            .map_err(|_| PdmError::BadFormat(format!("bad landmark count `{}`", fields[2])))?;
        let m: usize = fields[3]
            .parse()
            .map_err(|_| PdmError::BadFormat(format!("bad mode count `{}`", fields[3])))?;

        let values: Vec<f64> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| PdmError::BadFormat(format!("bad number `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        let expected = 2 * n + m + m * 2 * n;
        if values.len() != expected {
            return Err(PdmError::BadFormat(format!(
                "expected {expected} values after the header, got {}",
                values.len()
            )));
        }
        let mean = values[..2 * n]
            .chunks_exact(2)
            .map(|c| Point::new(c[0], c[1]))
            .collect();
        let eigenvalues = values[2 * n..2 * n + m].to_vec();
        let modes = DMatrix::from_fn(2 * n, m, |row, col| {
            values[2 * n + m + col * 2 * n + row]
        });
        Self::from_parts(mean, eigenvalues, modes)
    }
}

/// Align `shapes` with generalized Procrustes and keep the smallest set of
/// leading covariance eigenmodes whose variance sum reaches
/// `variance_fraction` of the total. Modes with (numerically) zero variance
/// are never kept. Each kept mode is sign-fixed so its first non-zero entry
/// is positive.
pub fn build_pdm(
    shapes: &[ShapeVector],
    variance_fraction: f64,
) -> Result<PointDistributionModel, PdmError> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(PdmError::InvalidVarianceFraction(variance_fraction));
    }
    let gpa = generalized_procrustes(shapes)?;
    let s = gpa.aligned.len();
    let dim = 2 * gpa.mean.len();

    let flat: Vec<DVector<f64>> = gpa.aligned.iter().map(|s| flatten(s)).collect();
    let mean = flat.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / s as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in &flat {
        let d = x - &mean;
        cov += &d * d.transpose();
    }
    cov /= (s - 1) as f64;

    let eigen = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });

    let total: f64 = eigen.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let floor = eigen.eigenvalues[order[0]].max(0.0) * 1e-12;
    let mut kept = Vec::new();
    let mut cumulative = 0.0;
    for &idx in &order {
        let l = eigen.eigenvalues[idx];
        if l <= floor || l <= 0.0 {
            break;
        }
        kept.push(idx);
        cumulative += l;
        if total > 0.0 && cumulative / total >= variance_fraction {
            break;
        }
    }

    let eigenvalues: Vec<f64> = kept.iter().map(|&i| eigen.eigenvalues[i]).collect();
    let mut modes = DMatrix::zeros(dim, kept.len());
    for (col, &idx) in kept.iter().enumerate() {
        let mut v = eigen.eigenvectors.column(idx).into_owned();
        if let Some(first) = v.iter().find(|&&x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        modes.set_column(col, &v);
    }

    PointDistributionModel::from_parts(unflatten(&mean), eigenvalues, modes)
}
