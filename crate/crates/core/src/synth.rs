//! Seeded synthetic test assets: confidence maps with a Gaussian ridge along
//! a known outline, square occlusions, and families of smoothly deformed
//! shapes for model training.
//!
//! All randomness comes from a counter-based generator (ChaCha8) seeded
//! explicitly, so every artifact is reproducible bit-for-bit across runs and
//! platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::confmap::ConfidenceMap;
use crate::geometry::{point_segment_distance, Point, Polyline};
use crate::pdm::ShapeVector;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{expected} modes requested but {actual} amplitudes given")]
    AmplitudeMismatch { expected: usize, actual: usize },
    #[error("amplitudes must be finite and non-negative, got {0}")]
    InvalidAmplitude(f64),
    #[error("{requested} modes requested but the base shape supports only {supported}")]
    TooManyModes { requested: usize, supported: usize },
}

/// Controls for confidence-map synthesis.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    /// Gaussian ridge width in pixels.
    pub ridge_sigma: f64,
    /// Ridge value at zero distance, in `(0, 1]`.
    pub peak_value: f64,
    /// Standard deviation of the additive background noise.
    pub background_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            ridge_sigma: 2.0,
            peak_value: 1.0,
            background_noise_sigma: 0.02,
            seed: 0,
        }
    }
}

/// Uniform spatial hash of polyline segments for capped distance queries.
struct SegmentGrid {
    segments: Vec<(Point, Point)>,
    cell: f64,
    min: Point,
    max: Point,
    cols: i64,
    rows: i64,
    bins: Vec<Vec<u32>>,
}

impl SegmentGrid {
    fn build(outline: &Polyline, cell: f64) -> Self {
        let segments: Vec<(Point, Point)> = outline.segments().collect();
        let (min, max) = outline.bounding_box();
        let cols = (((max.x - min.x) / cell).floor() as i64 + 1).max(1);
        let rows = (((max.y - min.y) / cell).floor() as i64 + 1).max(1);
        let mut bins = vec![Vec::new(); (cols * rows) as usize];
        for (id, (a, b)) in segments.iter().enumerate() {
            let cx0 = (((a.x.min(b.x)) - min.x) / cell).floor() as i64;
            let cx1 = (((a.x.max(b.x)) - min.x) / cell).floor() as i64;
            let cy0 = (((a.y.min(b.y)) - min.y) / cell).floor() as i64;
            let cy1 = (((a.y.max(b.y)) - min.y) / cell).floor() as i64;
            for cy in cy0.max(0)..=cy1.min(rows - 1) {
                for cx in cx0.max(0)..=cx1.min(cols - 1) {
                    bins[(cy * cols + cx) as usize].push(id as u32);
                }
            }
        }
        Self {
            segments,
            cell,
            min,
            max,
            cols,
            rows,
            bins,
        }
    }

    /// Exact distance from `p` to the polyline when it is below `cap`;
    /// otherwise exactly `cap`. Searches cells in expanding rings and stops
    /// once no unvisited cell can hold a closer segment.
    fn distance_capped(&self, p: Point, cap: f64) -> f64 {
        // Every segment lies inside the bounding box, so the box distance is
        // a lower bound and far pixels can skip the search entirely.
        let bx = (self.min.x - p.x).max(p.x - self.max.x).max(0.0);
        let by = (self.min.y - p.y).max(p.y - self.max.y).max(0.0);
        if bx * bx + by * by >= cap * cap {
            return cap;
        }

        let px = ((p.x - self.min.x) / self.cell).floor() as i64;
        let py = ((p.y - self.min.y) / self.cell).floor() as i64;
        let mut best = cap;
        let visit = |cx: i64, cy: i64, best: &mut f64| {
            if cx < 0 || cy < 0 || cx >= self.cols || cy >= self.rows {
                return;
            }
            for &id in &self.bins[(cy * self.cols + cx) as usize] {
                let (a, b) = &self.segments[id as usize];
                let d = point_segment_distance(&p, a, b);
                if d < *best {
                    *best = d;
                }
            }
        };
        let max_ring = self.cols.max(self.rows) + (cap / self.cell).ceil() as i64 + 2;
        for ring in 0..=max_ring {
            if (ring - 1) as f64 * self.cell >= best {
                break;
            }
            if ring == 0 {
                visit(px, py, &mut best);
            } else {
                for cx in (px - ring)..=(px + ring) {
                    visit(cx, py - ring, &mut best);
                    visit(cx, py + ring, &mut best);
                }
                for cy in (py - ring + 1)..=(py + ring - 1) {
                    visit(px - ring, cy, &mut best);
                    visit(px + ring, cy, &mut best);
                }
            }
        }
        best.min(cap)
    }
}

/// Confidence map with a Gaussian ridge of width `ridge_sigma` along
/// `outline`: each pixel takes
/// `clamp(peak_value * exp(-d^2 / (2 sigma^2)) + noise, 0, 1)` where `d` is
/// the exact distance to the outline. Noise is drawn per pixel in row-major
/// order from a generator seeded with `config.seed`; a zero
/// `background_noise_sigma` draws nothing.
pub fn confmap_from_outline(
    outline: &Polyline,
    width: usize,
    height: usize,
    config: &SynthConfig,
) -> ConfidenceMap {
    assert!(
        config.ridge_sigma > 0.0,
        "ridge_sigma must be positive, got {}",
        config.ridge_sigma
    );
    assert!(
        config.peak_value > 0.0 && config.peak_value <= 1.0,
        "peak_value must be in (0, 1], got {}",
        config.peak_value
    );
    assert!(
        config.background_noise_sigma >= 0.0,
        "background_noise_sigma must be non-negative, got {}",
        config.background_noise_sigma
    );

    // Beyond this distance the ridge term underflows to exactly 0.
    let cap = config.ridge_sigma * 40.0;
    let grid = SegmentGrid::build(outline, (config.ridge_sigma * 8.0).max(8.0));
    let inv_two_sigma2 = 1.0 / (2.0 * config.ridge_sigma * config.ridge_sigma);

    let mut values = vec![0.0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let d = grid.distance_capped(Point::new(x as f64, y as f64), cap);
            values[y * width + x] = config.peak_value * (-d * d * inv_two_sigma2).exp();
        }
    }

    if config.background_noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let noise = Normal::new(0.0, config.background_noise_sigma)
            .expect("validated noise sigma is a valid normal std-dev");
        for v in &mut values {
            *v += noise.sample(&mut rng);
        }
    }
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    ConfidenceMap::new(width, height, values).expect("clamped values are a valid map")
}

/// An axis-aligned square occlusion with top-left corner `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionRect {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl OcclusionRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.side && y >= self.y && y < self.y + self.side
    }
}

/// Zero out `n_squares` axis-aligned squares with sides drawn uniformly from
/// `side_range` (inclusive) and positions drawn uniformly among placements
/// that keep the square inside the image. Draw order per square: side, x, y.
pub fn occlude_squares(
    map: &ConfidenceMap,
    n_squares: usize,
    side_range: (usize, usize),
    seed: u64,
) -> (ConfidenceMap, Vec<OcclusionRect>) {
    let (min_side, max_side) = side_range;
    assert!(
        min_side >= 1 && min_side <= max_side,
        "side range must satisfy 1 <= min <= max, got {side_range:?}"
    );
    assert!(
        max_side <= map.width() && max_side <= map.height(),
        "side range {side_range:?} exceeds the {}x{} image",
        map.width(),
        map.height()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut occluded = map.clone();
    let mut rects = Vec::with_capacity(n_squares);
    for _ in 0..n_squares {
        let side = rng.random_range(min_side..=max_side);
        let x = rng.random_range(0..=map.width() - side);
        let y = rng.random_range(0..=map.height() - side);
        for py in y..y + side {
            for px in x..x + side {
                occluded.set_clamped(px, py, 0.0);
            }
        }
        rects.push(OcclusionRect { x, y, side });
    }
    (occluded, rects)
}

/// The fixed orthonormal deformation fields used by
/// [`generate_shape_family`]: sinusoidal displacement patterns over the point
/// index, starting at two cycles per loop so similarity alignment cannot
/// absorb them on circular bases.
pub fn deformation_fields(
    n_points: usize,
    n_modes: usize,
) -> Result<Vec<Vec<nalgebra::Vector2<f64>>>, SynthError> {
    if n_modes > 2 * n_points {
        return Err(SynthError::TooManyModes {
            requested: n_modes,
            supported: 2 * n_points,
        });
    }
    let mut fields: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for j in 0..n_modes {
        let cycles = (2 + j / 2) as f64;
        let mut field = Vec::with_capacity(2 * n_points);
        for i in 0..n_points {
            let phase = std::f64::consts::TAU * cycles * i as f64 / n_points as f64;
            let (sin, cos) = phase.sin_cos();
            if j % 2 == 0 {
                field.extend_from_slice(&[cos, sin]);
            } else {
                field.extend_from_slice(&[-sin, cos]);
            }
        }
        // Gram-Schmidt against the accepted fields; the sinusoids are
        // orthogonal analytically, this removes the last float dust.
        for prev in &fields {
            let dot: f64 = field.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (f, p) in field.iter_mut().zip(prev) {
                *f -= dot * p;
            }
        }
        let norm: f64 = field.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(SynthError::TooManyModes {
                requested: n_modes,
                supported: j,
            });
        }
        for f in &mut field {
            *f /= norm;
        }
        fields.push(field);
    }
    Ok(fields
        .into_iter()
        .map(|f| {
            f.chunks_exact(2)
                .map(|c| nalgebra::Vector2::new(c[0], c[1]))
                .collect()
        })
        .collect())
}

/// Generate `n_shapes` variants of `base` by adding the fixed orthonormal
/// deformation fields with Gaussian coefficients; `mode_amplitudes[j]` is the
/// standard deviation of mode `j`'s coefficient.
pub fn generate_shape_family(
    base: &[Point],
    n_shapes: usize,
    n_modes: usize,
    mode_amplitudes: &[f64],
    seed: u64,
) -> Result<Vec<ShapeVector>, SynthError> {
    if mode_amplitudes.len() != n_modes {
        return Err(SynthError::AmplitudeMismatch {
            expected: n_modes,
            actual: mode_amplitudes.len(),
        });
    }
    if let Some(&bad) = mode_amplitudes
        .iter()
        .find(|a| !(a.is_finite() && **a >= 0.0))
    {
        return Err(SynthError::InvalidAmplitude(bad));
    }
    let fields = deformation_fields(base.len(), n_modes)?;
    let samplers: Vec<Normal<f64>> = mode_amplitudes
        .iter()
        .map(|&a| Normal::new(0.0, a).expect("validated amplitude is a valid std-dev"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let mut shape: Vec<Point> = base.to_vec();
        for (field, sampler) in fields.iter().zip(&samplers) {
            let c = sampler.sample(&mut rng);
            for (p, f) in shape.iter_mut().zip(field) {
                p.coords += c * f;
            }
        }
        shapes.push(shape);
    }
    Ok(shapes)
}
