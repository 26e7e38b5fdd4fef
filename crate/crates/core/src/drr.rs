//! Fluoroscopy-style image synthesis from CT volumes: per-pixel ray casting
//! with trilinear sampling, attenuation saturation, and grayscale mapping,
//! plus perspective projection of triangle meshes into silhouette ground
//! truth (outline polyline + binary mask).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Point, Polyline};
use crate::gray::GrayImage;

pub const HU_MIN: f64 = -1024.0;
pub const HU_MAX: f64 = 3071.0;

#[derive(Debug, Error)]
pub enum DrrError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("CT value {0} HU outside [{HU_MIN}, {HU_MAX}]")]
    OutOfRange(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("no mesh vertex projects inside the image")]
    EmptyProjection,
    #[error("degenerate outline: {0}")]
    DegenerateOutline(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DrrError {
    DrrError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// CT volume on a regular grid; values are Hounsfield units stored x-fastest.
#[derive(Debug, Clone)]
pub struct CtVolume {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: Vec<i16>,
}

impl CtVolume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        origin: (f64, f64, f64),
        values: Vec<i16>,
    ) -> Result<Self, DrrError> {
        let (nx, ny, nz) = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(DrrError::InvalidVolume(format!(
                "dimensions must all be at least 1, got {nx}x{ny}x{nz}"
            )));
        }
        for (axis, s) in [("x", spacing.0), ("y", spacing.1), ("z", spacing.2)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(DrrError::InvalidVolume(format!(
                    "{axis} spacing must be positive and finite, got {s}"
                )));
            }
        }
        for o in [origin.0, origin.1, origin.2] {
            if !o.is_finite() {
                return Err(DrrError::InvalidVolume(format!("non-finite origin {o}")));
            }
        }
        if values.len() != nx * ny * nz {
            return Err(DrrError::InvalidVolume(format!(
                "expected {} values for {nx}x{ny}x{nz}, got {}",
                nx * ny * nz,
                values.len()
            )));
        }
        if let Some(&bad) = values
            .iter()
            .find(|&&v| f64::from(v) < HU_MIN || f64::from(v) > HU_MAX)
        {
            return Err(DrrError::InvalidVolume(format!(
                "value {bad} HU outside [{HU_MIN}, {HU_MAX}]"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            values,
        })
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        origin: (f64, f64, f64),
        mut f: impl FnMut(usize, usize, usize) -> i16,
    ) -> Result<Self, DrrError> {
        let (nx, ny, nz) = dims;
        let mut values = Vec::with_capacity(nx * ny * nz);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    values.push(f(ix, iy, iz));
                }
            }
        }
        Self::new(dims, spacing, origin, values)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64, f64) {
        self.origin
    }

    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> i16 {
        let (nx, ny, _) = self.dims;
        self.values[ix + nx * (iy + ny * iz)]
    }
}

/// CT number to linear attenuation: `(ct + 1024)/1024 * mu_water` per mm.
///
/// Air (−1024 HU) maps to exactly 0; the top of the range approaches
/// `4 * mu_water`.
pub fn hu_to_attenuation(ct: f64, mu_water: f64) -> Result<f64, DrrError> {
    if !(HU_MIN..=HU_MAX).contains(&ct) {
        return Err(DrrError::OutOfRange(ct));
    }
    Ok((ct + 1024.0) / 1024.0 * mu_water)
}

fn lerp_index(p: f64, origin: f64, spacing: f64, n: usize) -> Option<(usize, usize, f64)> {
    let g = (p - origin) / spacing;
    if !(0.0..=(n - 1) as f64).contains(&g) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let i0 = (g.floor() as usize).min(n - 2);
    Some((i0, i0 + 1, g - i0 as f64))
}

/// Trilinear interpolation of the 8 voxels around `position` (mm frame, where
/// voxel `(i,j,k)` is centered at `origin + (i,j,k)·spacing`). Positions
/// outside the voxel-center bounding box read as air (−1024 HU).
pub fn trilinear_sample(volume: &CtVolume, position: Point3<f64>) -> f64 {
    let (nx, ny, nz) = volume.dims;
    let (Some((x0, x1, fx)), Some((y0, y1, fy)), Some((z0, z1, fz))) = (
        lerp_index(position.x, volume.origin.0, volume.spacing.0, nx),
        lerp_index(position.y, volume.origin.1, volume.spacing.1, ny),
        lerp_index(position.z, volume.origin.2, volume.spacing.2, nz),
    ) else {
        return HU_MIN;
    };
    let at = |ix: usize, iy: usize, iz: usize| f64::from(volume.value(ix, iy, iz));
    let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
    let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
    let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
    let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Total attenuation along the segment, sampled with the midpoint rule:
/// sample `k` sits at `start + (k+0.5)/n·(end−start)` and contributes
/// `mu·‖end−start‖/n`.
pub fn cast_ray(
    volume: &CtVolume,
    start: Point3<f64>,
    end: Point3<f64>,
    n_samples: usize,
    mu_water: f64,
) -> f64 {
    assert!(n_samples >= 2, "need at least 2 ray samples");
    let dir = end - start;
    let length = dir.norm();
    assert!(length > 0.0, "ray start and end coincide");
    let dx = length / n_samples as f64;
    let inv_n = 1.0 / n_samples as f64;
    let mut total = 0.0;
    for k in 0..n_samples {
        let hu = trilinear_sample(volume, start + dir * ((k as f64 + 0.5) * inv_n));
        total += (hu + 1024.0) / 1024.0 * mu_water * dx;
    }
    total
}

/// Pinhole geometry: focal point plus a flat detector spanned by two
/// orthonormal axes, sampled on a regular pixel grid centered on the
/// detector center.
#[derive(Debug, Clone)]
pub struct CameraGeometry {
    focal_point: Point3<f64>,
    detector_center: Point3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    pixel_pitch: f64,
    image_size: (usize, usize),
    circular_mask: bool,
}

impl CameraGeometry {
    pub fn new(
        focal_point: Point3<f64>,
        detector_center: Point3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        pixel_pitch: f64,
        image_size: (usize, usize),
        circular_mask: bool,
    ) -> Result<Self, DrrError> {
        if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 {
            return Err(DrrError::InvalidCamera(
                "detector axes must be unit length".into(),
            ));
        }
        if u.dot(&v).abs() > 1e-9 {
            return Err(DrrError::InvalidCamera(
                "detector axes must be orthogonal".into(),
            ));
        }
        if !(pixel_pitch.is_finite() && pixel_pitch > 0.0) {
            return Err(DrrError::InvalidCamera(format!(
                "pixel pitch must be positive and finite, got {pixel_pitch}"
            )));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(DrrError::InvalidCamera(format!(
                "image size must be at least 1x1, got {}x{}",
                image_size.0, image_size.1
            )));
        }
        let normal = u.cross(&v);
        if (focal_point - detector_center).dot(&normal).abs() <= 1e-9 {
            return Err(DrrError::InvalidCamera(
                "focal point lies on the detector plane".into(),
            ));
        }
        Ok(Self {
            focal_point,
            detector_center,
            u,
            v,
            pixel_pitch,
            image_size,
            circular_mask,
        })
    }

    pub fn focal_point(&self) -> Point3<f64> {
        self.focal_point
    }

    pub fn detector_center(&self) -> Point3<f64> {
        self.detector_center
    }

    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.u, self.v)
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn circular_mask(&self) -> bool {
        self.circular_mask
    }

    /// 3D position of the pixel center `(px, py)` on the detector plane.
    pub fn pixel_position(&self, px: usize, py: usize) -> Point3<f64> {
        let (w, h) = self.image_size;
        let du = (px as f64 - (w as f64 - 1.0) / 2.0) * self.pixel_pitch;
        let dv = (py as f64 - (h as f64 - 1.0) / 2.0) * self.pixel_pitch;
        self.detector_center + self.u * du + self.v * dv
    }

    /// Whether the pixel lies inside the active detector area (the inscribed
    /// disk when the circular mask is on, the whole image otherwise).
    pub fn pixel_active(&self, px: usize, py: usize) -> bool {
        if !self.circular_mask {
            return true;
        }
        let (w, h) = self.image_size;
        let dx = px as f64 - (w as f64 - 1.0) / 2.0;
        let dy = py as f64 - (h as f64 - 1.0) / 2.0;
        let r = w.min(h) as f64 / 2.0;
        dx * dx + dy * dy <= r * r
    }
}

/// Ray-casting controls: samples per ray, water attenuation, the fraction of
/// pixels driven to the brightest gray, and the output gray range.
#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub mu_water: f64,
    pub saturation_fraction: f64,
    pub gray_min: u8,
    pub gray_max: u8,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            mu_water: 0.02,
            saturation_fraction: 0.025,
            gray_min: 20,
            gray_max: 255,
        }
    }
}

impl RenderConfig {
    fn validate(&self) -> Result<(), DrrError> {
        if self.n_samples < 2 {
            return Err(DrrError::InvalidConfig(format!(
                "need at least 2 samples per ray, got {}",
                self.n_samples
            )));
        }
        if !(self.mu_water.is_finite() && self.mu_water > 0.0) {
            return Err(DrrError::InvalidConfig(format!(
                "mu_water must be positive and finite, got {}",
                self.mu_water
            )));
        }
        if !(0.0..1.0).contains(&self.saturation_fraction) {
            return Err(DrrError::InvalidConfig(format!(
                "saturation fraction must be in [0, 1), got {}",
                self.saturation_fraction
            )));
        }
        if self.gray_min >= self.gray_max {
            return Err(DrrError::InvalidConfig(format!(
                "gray range [{}, {}] is empty",
                self.gray_min, self.gray_max
            )));
        }
        Ok(())
    }
}

/// Per-pixel total attenuation, row-major. Rows are independent, so they are
/// computed in parallel; the output is identical regardless of scheduling.
pub fn attenuation_grid(
    volume: &CtVolume,
    camera: &CameraGeometry,
    n_samples: usize,
    mu_water: f64,
) -> Vec<f64> {
    let (w, h) = camera.image_size;
    let mut grid = vec![0.0f64; w * h];
    grid.par_chunks_mut(w).enumerate().for_each(|(py, row)| {
        for (px, slot) in row.iter_mut().enumerate() {
            let pixel = camera.pixel_position(px, py);
            *slot = cast_ray(volume, camera.focal_point, pixel, n_samples, mu_water);
        }
    });
    grid
}

/// Render the volume through the camera: cast one ray per pixel, clamp the
/// lowest `saturation_fraction` of attenuations up to their quantile (so that
/// fraction of pixels shares the brightest gray), map `exp(−A)` linearly onto
/// `[gray_min, gray_max]` rounding half up, and zero everything outside the
/// inscribed disk when the circular mask is on.
///
/// If every active attenuation is equal after clamping (an all-air scene, for
/// instance), every active pixel renders as `gray_max`.
pub fn render(
    volume: &CtVolume,
    camera: &CameraGeometry,
    config: &RenderConfig,
) -> Result<GrayImage, DrrError> {
    config.validate()?;
    let (w, h) = camera.image_size;
    let mut attenuation = attenuation_grid(volume, camera, config.n_samples, config.mu_water);
    let active: Vec<usize> = (0..w * h)
        .filter(|&i| camera.pixel_active(i % w, i / w))
        .collect();

    if config.saturation_fraction > 0.0 {
        let mut sorted: Vec<f64> = active.iter().map(|&i| attenuation[i]).collect();
        sorted.sort_by(f64::total_cmp);
        let k = (config.saturation_fraction * sorted.len() as f64).ceil() as usize;
        let quantile = sorted[k.max(1) - 1];
        for a in &mut attenuation {
            if *a < quantile {
                *a = quantile;
            }
        }
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in &active {
        let intensity = (-attenuation[i]).exp();
        lo = lo.min(intensity);
        hi = hi.max(intensity);
    }

    let mut image = GrayImage::filled(w, h, 0).expect("camera guarantees nonzero dimensions");
    let span = hi - lo;
    let gray_span = f64::from(config.gray_max - config.gray_min);
    for &i in &active {
        let gray = if span == 0.0 {
            config.gray_max
        } else {
            let intensity = (-attenuation[i]).exp();
            (f64::from(config.gray_min) + (intensity - lo) / span * gray_span).round() as u8
        };
        image.set(i % w, i / w, gray);
    }
    Ok(image)
}

/// Triangle mesh in mm coordinates.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, DrrError> {
        if faces.is_empty() {
            return Err(DrrError::InvalidMesh("mesh has no faces".into()));
        }
        for (i, face) in faces.iter().enumerate() {
            for &idx in face {
                if idx >= vertices.len() {
                    return Err(DrrError::InvalidMesh(format!(
                        "face {i} references vertex {idx} of {}",
                        vertices.len()
                    )));
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
}

/// Perspective projection of a 3D point through the focal point onto the
/// detector, in pixel coordinates. `None` when the ray from the focal point
/// through `point` runs parallel to the detector or away from it.
pub fn project_point(camera: &CameraGeometry, point: Point3<f64>) -> Option<(f64, f64)> {
    let normal = camera.u.cross(&camera.v);
    let dir = point - camera.focal_point;
    let along = dir.dot(&normal);
    let t = (camera.detector_center - camera.focal_point).dot(&normal) / along;
    if !(t.is_finite() && t > 0.0) {
        return None;
    }
    let hit = camera.focal_point + dir * t;
    let offset = hit - camera.detector_center;
    let (w, h) = camera.image_size;
    Some((
        offset.dot(&camera.u) / camera.pixel_pitch + (w as f64 - 1.0) / 2.0,
        offset.dot(&camera.v) / camera.pixel_pitch + (h as f64 - 1.0) / 2.0,
    ))
}

fn disk_offsets(radius: usize) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

fn dilate(mask: &[bool], w: usize, h: usize, offsets: &[(i64, i64)]) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

fn erode(mask: &[bool], w: usize, h: usize, offsets: &[(i64, i64)]) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let keep = offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                nx >= 0
                    && ny >= 0
                    && (nx as usize) < w
                    && (ny as usize) < h
                    && mask[ny as usize * w + nx as usize]
            });
            out[y * w + x] = keep;
        }
    }
    out
}

fn is_boundary4(mask: &[bool], w: usize, h: usize, x: usize, y: usize) -> bool {
    if !mask[y * w + x] {
        return false;
    }
    let neighbors = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
    neighbors.iter().any(|&(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        nx < 0
            || ny < 0
            || nx as usize >= w
            || ny as usize >= h
            || !mask[ny as usize * w + nx as usize]
    })
}

/// Largest 8-connected foreground component, as a same-size boolean mask.
fn largest_component(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut label = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        sizes.push(0);
        stack.push(start);
        label[start] = id;
        while let Some(i) = stack.pop() {
            sizes[id as usize] += 1;
            let (x, y) = (i % w, i / w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && label[j] == 0 {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
    }
    let best = (1..sizes.len()).max_by_key(|&i| sizes[i]).unwrap_or(0) as u32;
    label.iter().map(|&l| l != 0 && l == best).collect()
}

/// Clockwise Moore neighborhood starting west, on screen coordinates
/// (x right, y down).
const MOORE_RING: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// Ordered outer contour of the mask's foreground (Moore-neighbor tracing
/// from the topmost-leftmost pixel, stopping when the entry state repeats).
fn trace_outer_contour(mask: &[bool], w: usize, h: usize) -> Vec<(usize, usize)> {
    let Some(start_idx) = (0..w * h).find(|&i| mask[i]) else {
        return Vec::new();
    };
    let start = ((start_idx % w) as i64, (start_idx / w) as i64);
    let at = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask[y as usize * w + x as usize]
    };

    let mut contour = vec![start];
    let mut current = start;
    let mut backtrack = 0usize;
    let initial = (start, 0usize);
    for _ in 0..8 * w * h + 8 {
        let mut found = None;
        for step in 1..=8 {
            let dir = (backtrack + step) % 8;
            let (dx, dy) = MOORE_RING[dir];
            if at(current.0 + dx, current.1 + dy) {
                found = Some((dir, step));
                break;
            }
        }
        let Some((dir, _)) = found else {
            break;
        };
        let next = (current.0 + MOORE_RING[dir].0, current.1 + MOORE_RING[dir].1);
        let prev_bg_dir = (dir + 7) % 8;
        let prev_bg = (
            current.0 + MOORE_RING[prev_bg_dir].0,
            current.1 + MOORE_RING[prev_bg_dir].1,
        );
        let next_backtrack = MOORE_RING
            .iter()
            .position(|&(dx, dy)| (next.0 + dx, next.1 + dy) == prev_bg)
            .expect("ring-adjacent cells stay Moore neighbors");
        if (next, next_backtrack) == initial {
            break;
        }
        contour.push(next);
        current = next;
        backtrack = next_backtrack;
    }
    contour
        .into_iter()
        .map(|(x, y)| (x as usize, y as usize))
        .collect()
}

/// Project every mesh vertex through the focal point onto the detector,
/// rasterize the hits, close the point cloud with a disk of `closing_radius`
/// pixels, and trace the silhouette. Returns the ordered outline (pixel
/// centers of mask pixels with a 4-neighbor outside, largest boundary) and
/// the closed binary mask (255 foreground, 0 background).
pub fn project_mesh_ground_truth(
    mesh: &TriangleMesh,
    camera: &CameraGeometry,
    closing_radius: usize,
) -> Result<(Polyline, GrayImage), DrrError> {
    let (w, h) = camera.image_size;
    let mut mask = vec![false; w * h];
    let mut any = false;
    for &vertex in &mesh.vertices {
        let Some((px, py)) = project_point(camera, vertex) else {
            continue;
        };
        let (ix, iy) = (px.round() as i64, py.round() as i64);
        if ix >= 0 && iy >= 0 && (ix as usize) < w && (iy as usize) < h {
            mask[iy as usize * w + ix as usize] = true;
            any = true;
        }
    }
    if !any {
        return Err(DrrError::EmptyProjection);
    }

    let offsets = disk_offsets(closing_radius);
    let closed = erode(&dilate(&mask, w, h, &offsets), w, h, &offsets);
    if !closed.iter().any(|&m| m) {
        return Err(DrrError::DegenerateOutline(
            "mask vanished under morphological closing".into(),
        ));
    }
    let component = largest_component(&closed, w, h);

    let mut outline: Vec<Point> = trace_outer_contour(&component, w, h)
        .into_iter()
        .filter(|&(x, y)| is_boundary4(&component, w, h, x, y))
        .map(|(x, y)| Point::new(x as f64, y as f64))
        .collect();
    outline.dedup();
    if outline.len() > 1 && outline.first() == outline.last() {
        outline.pop();
    }
    if outline.len() < 2 {
        return Err(DrrError::DegenerateOutline(format!(
            "traced boundary has {} distinct pixels",
            outline.len()
        )));
    }
    let polyline = Polyline::new(outline, true)
        .map_err(|e| DrrError::DegenerateOutline(e.to_string()))?;

    let mut mask_image = GrayImage::filled(w, h, 0).expect("camera guarantees nonzero dimensions");
    for y in 0..h {
        for x in 0..w {
            if component[y * w + x] {
                mask_image.set(x, y, 255);
            }
        }
    }
    Ok((polyline, mask_image))
}

/// Write a volume as a `CTVOL 1` file: one text header line with dimensions,
/// spacing, and origin, then little-endian signed 16-bit HU values x-fastest.
pub fn save_ctvol(volume: &CtVolume, path: &Path) -> Result<(), DrrError> {
    let mut file = BufWriter::new(File::create(path)?);
    let (nx, ny, nz) = volume.dims;
    let (sx, sy, sz) = volume.spacing;
    let (ox, oy, oz) = volume.origin;
    writeln!(file, "CTVOL 1 {nx} {ny} {nz} {sx} {sy} {sz} {ox} {oy} {oz}")?;
    for value in &volume.values {
        file.write_all(&value.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_ctvol(path: &Path) -> Result<CtVolume, DrrError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(parse_err(path, 1, "missing header line"));
        }
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 256 {
            return Err(parse_err(path, 1, "header line too long"));
        }
    }
    let header = String::from_utf8(header)
        .map_err(|_| parse_err(path, 1, "header is not valid UTF-8"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 11 || tokens[0] != "CTVOL" || tokens[1] != "1" {
        return Err(parse_err(
            path,
            1,
            format!("expected `CTVOL 1` header with 9 fields, got {header:?}"),
        ));
    }
    let usize_at = |i: usize| -> Result<usize, DrrError> {
        tokens[i]
            .parse()
            .map_err(|_| parse_err(path, 1, format!("bad dimension {:?}", tokens[i])))
    };
    let f64_at = |i: usize| -> Result<f64, DrrError> {
        tokens[i]
            .parse()
            .map_err(|_| parse_err(path, 1, format!("bad number {:?}", tokens[i])))
    };
    let dims = (usize_at(2)?, usize_at(3)?, usize_at(4)?);
    let spacing = (f64_at(5)?, f64_at(6)?, f64_at(7)?);
    let origin = (f64_at(8)?, f64_at(9)?, f64_at(10)?);

    let count = dims
        .0
        .checked_mul(dims.1)
        .and_then(|n| n.checked_mul(dims.2))
        .ok_or_else(|| parse_err(path, 1, "dimensions overflow"))?;
    let mut payload = vec![0u8; count * 2];
    reader
        .read_exact(&mut payload)
        .map_err(|_| parse_err(path, 1, format!("expected {} payload bytes", count * 2)))?;
    if reader.read(&mut byte)? != 0 {
        return Err(parse_err(path, 1, "trailing data after voxel payload"));
    }
    let values = payload
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    CtVolume::new(dims, spacing, origin, values)
}

/// Load a minimal OBJ subset: `v x y z` vertices and `f i j k` triangles
/// (1-based indices, `i/…` suffixes tolerated); every other line is ignored.
pub fn load_obj_mesh(path: &Path) -> Result<TriangleMesh, DrrError> {
    let reader = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let number = idx + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coord = |axis: &str| -> Result<f64, DrrError> {
                    tokens
                        .next()
                        .ok_or_else(|| parse_err(path, number, format!("missing {axis} coordinate")))?
                        .parse()
                        .map_err(|_| parse_err(path, number, format!("bad {axis} coordinate")))
                };
                vertices.push(Point3::new(coord("x")?, coord("y")?, coord("z")?));
            }
            Some("f") => {
                let indices: Vec<&str> = tokens.collect();
                if indices.len() != 3 {
                    return Err(parse_err(
                        path,
                        number,
                        format!("expected 3 face indices, got {}", indices.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (slot, token) in face.iter_mut().zip(&indices) {
                    let first = token.split('/').next().unwrap_or("");
                    let index: usize = first
                        .parse()
                        .map_err(|_| parse_err(path, number, format!("bad face index {token:?}")))?;
                    if index == 0 {
                        return Err(parse_err(path, number, "face indices are 1-based"));
                    }
                    *slot = index - 1;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| match e {
        DrrError::InvalidMesh(msg) => parse_err(path, 0, msg),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::path::PathBuf;

    fn temp_path(name: &str) -> PathBuf {
        std::env::temp_dir().join(format!("drr-{}-{name}", std::process::id()))
    }

    /// Deterministic pseudo-random value in [0, 1) from integer coordinates.
    fn hash01(seed: u64, a: u64, b: u64, c: u64) -> f64 {
        let mut x = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(a)
            .wrapping_mul(0xbf58_476d_1ce4_e5b9)
            .wrapping_add(b)
            .wrapping_mul(0x94d0_49bb_1331_11eb)
            .wrapping_add(c);
        x ^= x >> 31;
        x = x.wrapping_mul(0xd6e8_feb8_6659_fd93);
        x ^= x >> 32;
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    fn noise_volume(dims: (usize, usize, usize)) -> CtVolume {
        CtVolume::from_fn(dims, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), |x, y, z| {
            (hash01(7, x as u64, y as u64, z as u64) * 2000.0 - 500.0) as i16
        })
        .unwrap()
    }

    fn air_volume(dims: (usize, usize, usize)) -> CtVolume {
        CtVolume::from_fn(dims, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), |_, _, _| -1024).unwrap()
    }

    /// All-water volume whose voxel centers span [0, n-1] on each axis.
    fn water_volume(n: usize) -> CtVolume {
        CtVolume::from_fn((n, n, n), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), |_, _, _| 0).unwrap()
    }

    /// Chord length of a segment inside an axis-aligned box (slab method).
    fn chord_length(
        start: Point3<f64>,
        end: Point3<f64>,
        lo: Point3<f64>,
        hi: Point3<f64>,
    ) -> f64 {
        let dir = end - start;
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for axis in 0..3 {
            if dir[axis] == 0.0 {
                if start[axis] < lo[axis] || start[axis] > hi[axis] {
                    return 0.0;
                }
                continue;
            }
            let a = (lo[axis] - start[axis]) / dir[axis];
            let b = (hi[axis] - start[axis]) / dir[axis];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 - t0).max(0.0) * dir.norm()
    }

    fn straight_camera(size: (usize, usize), pitch: f64, mask: bool) -> CameraGeometry {
        CameraGeometry::new(
            Point3::new(0.0, 0.0, -400.0),
            Point3::new(0.0, 0.0, 400.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            pitch,
            size,
            mask,
        )
        .unwrap()
    }

    #[test]
    fn hu_conversion_matches_hand_values() {
        assert_eq!(hu_to_attenuation(-1024.0, 0.5).unwrap(), 0.0);
        assert_eq!(hu_to_attenuation(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(hu_to_attenuation(3071.0, 1.0).unwrap(), 4095.0 / 1024.0);
        assert!(matches!(
            hu_to_attenuation(-1025.0, 1.0),
            Err(DrrError::OutOfRange(_))
        ));
        assert!(matches!(
            hu_to_attenuation(3072.0, 1.0),
            Err(DrrError::OutOfRange(_))
        ));
    }

    #[test]
    fn hu_conversion_is_affine_and_increasing() {
        let mu = 0.02;
        let a = hu_to_attenuation(-1024.0, mu).unwrap();
        let b = hu_to_attenuation(0.0, mu).unwrap();
        let c = hu_to_attenuation(1024.0, mu).unwrap();
        assert!(a < b && b < c);
        assert_relative_eq!(c - b, b - a, epsilon = 1e-15);
    }

    #[test]
    fn trilinear_is_exact_at_voxel_centers() {
        let volume = CtVolume::from_fn((4, 3, 5), (0.7, 1.3, 2.1), (-2.0, 5.0, 1.5), |x, y, z| {
            (hash01(3, x as u64, y as u64, z as u64) * 3000.0 - 1000.0) as i16
        })
        .unwrap();
        for iz in 0..5 {
            for iy in 0..3 {
                for ix in 0..4 {
                    let p = Point3::new(
                        -2.0 + ix as f64 * 0.7,
                        5.0 + iy as f64 * 1.3,
                        1.5 + iz as f64 * 2.1,
                    );
                    assert_relative_eq!(
                        trilinear_sample(&volume, p),
                        f64::from(volume.value(ix, iy, iz)),
                        epsilon = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn trilinear_midpoint_between_two_voxels_averages() {
        let volume = CtVolume::from_fn((2, 1, 1), (2.0, 1.0, 1.0), (0.0, 0.0, 0.0), |x, _, _| {
            if x == 0 {
                0
            } else {
                1000
            }
        })
        .unwrap();
        assert_relative_eq!(
            trilinear_sample(&volume, Point3::new(1.0, 0.0, 0.0)),
            500.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn trilinear_matches_nested_lerp_oracle() {
        let volume = noise_volume((6, 5, 4));
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        for trial in 0..60u64 {
            let p = Point3::new(
                hash01(11, trial, 0, 0) * 5.0,
                hash01(11, trial, 1, 0) * 4.0,
                hash01(11, trial, 2, 0) * 3.0,
            );
            let (x0, y0, z0) = (
                (p.x.floor() as usize).min(4),
                (p.y.floor() as usize).min(3),
                (p.z.floor() as usize).min(2),
            );
            let (fx, fy, fz) = (p.x - x0 as f64, p.y - y0 as f64, p.z - z0 as f64);
            let v = |dx: usize, dy: usize, dz: usize| {
                f64::from(volume.value(x0 + dx, y0 + dy, z0 + dz))
            };
            let oracle = lerp(
                lerp(lerp(v(0, 0, 0), v(1, 0, 0), fx), lerp(v(0, 1, 0), v(1, 1, 0), fx), fy),
                lerp(lerp(v(0, 0, 1), v(1, 0, 1), fx), lerp(v(0, 1, 1), v(1, 1, 1), fx), fy),
                fz,
            );
            assert_relative_eq!(trilinear_sample(&volume, p), oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn trilinear_reproduces_trilinear_fields() {
        let f = |x: f64, y: f64, z: f64| {
            10.0 + 3.0 * x + 5.0 * y + 7.0 * z + 2.0 * x * y + x * z + y * z + x * y * z
        };
        let volume = CtVolume::from_fn((5, 4, 6), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), |x, y, z| {
            f(x as f64, y as f64, z as f64) as i16
        })
        .unwrap();
        for trial in 0..60u64 {
            let p = Point3::new(
                hash01(13, trial, 0, 0) * 4.0,
                hash01(13, trial, 1, 0) * 3.0,
                hash01(13, trial, 2, 0) * 5.0,
            );
            assert_relative_eq!(
                trilinear_sample(&volume, p),
                f(p.x, p.y, p.z),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn trilinear_outside_the_center_box_reads_air() {
        let volume = water_volume(4);
        for p in [
            Point3::new(-0.001, 1.0, 1.0),
            Point3::new(3.001, 1.0, 1.0),
            Point3::new(1.0, -5.0, 1.0),
            Point3::new(1.0, 1.0, 100.0),
            Point3::new(f64::NAN, 1.0, 1.0),
        ] {
            assert_eq!(trilinear_sample(&volume, p), -1024.0);
        }
    }

    #[test]
    fn ray_through_air_accumulates_nothing() {
        let volume = air_volume((8, 8, 8));
        let a = cast_ray(
            &volume,
            Point3::new(-10.0, 3.0, 3.0),
            Point3::new(20.0, 3.5, 4.0),
            64,
            0.02,
        );
        assert_eq!(a, 0.0);
    }

    #[test]
    fn water_chord_matches_the_slab_oracle() {
        let volume = water_volume(20);
        let lo = Point3::new(0.0, 0.0, 0.0);
        let hi = Point3::new(19.0, 19.0, 19.0);
        let mu = 0.02;

        let cases = [
            (Point3::new(-50.0, 9.0, 9.0), Point3::new(70.0, 9.0, 9.0)),
            (Point3::new(-30.0, -10.0, 2.2), Point3::new(50.0, 25.0, 16.8)),
        ];
        for (start, end) in cases {
            let n = 2000;
            let dx = (end - start).norm() / n as f64;
            let expected = mu * chord_length(start, end, lo, hi);
            let a = cast_ray(&volume, start, end, n, mu);
            assert!(
                (a - expected).abs() <= 2.0 * dx * mu + 1e-12,
                "A = {a}, expected {expected} ± {}",
                2.0 * dx * mu
            );
        }
    }

    #[test]
    fn doubling_samples_refines_the_water_chord() {
        let volume = water_volume(20);
        let start = Point3::new(-50.0, 9.0, 9.0);
        let end = Point3::new(70.0, 9.0, 9.0);
        let mu = 0.02;
        let expected = mu * chord_length(
            start,
            end,
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(19.0, 19.0, 19.0),
        );
        let errors: Vec<f64> = [250, 500, 1000, 2000]
            .iter()
            .map(|&n| (cast_ray(&volume, start, end, n, mu) - expected).abs())
            .collect();
        for pair in errors.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "error grew from {} to {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn all_air_renders_uniform_bright_inside_the_disk() {
        let volume = air_volume((8, 8, 8));
        let camera = straight_camera((33, 32), 2.0, true);
        let config = RenderConfig::default();
        let image = render(&volume, &camera, &config).unwrap();
        for py in 0..32 {
            for px in 0..33 {
                let expected = if camera.pixel_active(px, py) {
                    config.gray_max
                } else {
                    0
                };
                assert_eq!(image.get(px, py), expected, "pixel ({px}, {py})");
            }
        }
        let outside: Vec<(usize, usize)> = (0..32 * 33)
            .map(|i| (i % 33, i / 33))
            .filter(|&(x, y)| !camera.pixel_active(x, y))
            .collect();
        assert!(!outside.is_empty(), "33x32 must have masked corners");
    }

    #[test]
    fn saturation_brightens_at_least_the_requested_fraction() {
        let volume = CtVolume::from_fn(
            (16, 16, 16),
            (4.0, 4.0, 4.0),
            (-30.0, -30.0, -30.0),
            |_, _, _| 0,
        )
        .unwrap();
        let camera = straight_camera((32, 32), 6.0, false);
        let config = RenderConfig {
            n_samples: 200,
            ..RenderConfig::default()
        };
        let image = render(&volume, &camera, &config).unwrap();
        let needed = (0.025f64 * (32.0 * 32.0)).ceil() as usize;
        let bright = (0..32 * 32)
            .filter(|&i| image.get(i % 32, i / 32) == config.gray_max)
            .count();
        assert!(bright >= needed, "{bright} bright pixels, need {needed}");
    }

    #[test]
    fn intensity_is_non_increasing_in_attenuation() {
        let volume = CtVolume::from_fn(
            (16, 16, 16),
            (4.0, 4.0, 4.0),
            (-30.0, -30.0, -30.0),
            |x, y, z| if (x + y + z) % 3 == 0 { 800 } else { 0 },
        )
        .unwrap();
        let camera = straight_camera((32, 32), 6.0, false);
        let config = RenderConfig {
            n_samples: 200,
            ..RenderConfig::default()
        };
        let grid = attenuation_grid(&volume, &camera, config.n_samples, config.mu_water);
        let image = render(&volume, &camera, &config).unwrap();
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&i, &j| grid[i].total_cmp(&grid[j]));
        for pair in order.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            assert!(
                image.get(a % 32, a / 32) >= image.get(b % 32, b / 32),
                "intensity rose with attenuation at pixels {a} and {b}"
            );
        }
    }

    #[test]
    fn mirrored_detector_axis_mirrors_the_image_exactly() {
        let volume = CtVolume::from_fn((12, 12, 12), (5.0, 5.0, 5.0), (-27.5, -27.5, -27.5), |x, y, z| {
            (hash01(23, x as u64, y as u64, z as u64) * 1500.0 - 200.0) as i16
        })
        .unwrap();
        let make = |u: Vector3<f64>| {
            CameraGeometry::new(
                Point3::new(0.0, 0.0, -400.0),
                Point3::new(0.0, 0.0, 400.0),
                u,
                Vector3::new(0.0, 1.0, 0.0),
                4.0,
                (21, 17),
                true,
            )
            .unwrap()
        };
        let config = RenderConfig {
            n_samples: 64,
            ..RenderConfig::default()
        };
        let plain = render(&volume, &make(Vector3::new(1.0, 0.0, 0.0)), &config).unwrap();
        let flipped = render(&volume, &make(Vector3::new(-1.0, 0.0, 0.0)), &config).unwrap();
        for py in 0..17 {
            for px in 0..21 {
                assert_eq!(flipped.get(px, py), plain.get(20 - px, py));
            }
        }
    }

    #[test]
    fn camera_validation_rejects_bad_geometry() {
        let f = Point3::new(0.0, 0.0, -400.0);
        let c = Point3::new(0.0, 0.0, 400.0);
        let x = Vector3::new(1.0, 0.0, 0.0);
        let y = Vector3::new(0.0, 1.0, 0.0);
        assert!(matches!(
            CameraGeometry::new(f, c, x * 1.1, y, 1.0, (4, 4), false),
            Err(DrrError::InvalidCamera(_))
        ));
        let skewed = Vector3::new(1.0, 1.0, 0.0).normalize();
        assert!(matches!(
            CameraGeometry::new(f, c, x, skewed, 1.0, (4, 4), false),
            Err(DrrError::InvalidCamera(_))
        ));
        let on_plane = Point3::new(50.0, -20.0, 400.0);
        assert!(matches!(
            CameraGeometry::new(on_plane, c, x, y, 1.0, (4, 4), false),
            Err(DrrError::InvalidCamera(_))
        ));
        assert!(matches!(
            CameraGeometry::new(f, c, x, y, 0.0, (4, 4), false),
            Err(DrrError::InvalidCamera(_))
        ));
    }

    #[test]
    fn render_config_validation() {
        let volume = air_volume((2, 2, 2));
        let camera = straight_camera((4, 4), 1.0, false);
        let bad = [
            RenderConfig {
                n_samples: 1,
                ..RenderConfig::default()
            },
            RenderConfig {
                mu_water: 0.0,
                ..RenderConfig::default()
            },
            RenderConfig {
                saturation_fraction: 1.0,
                ..RenderConfig::default()
            },
            RenderConfig {
                gray_min: 200,
                gray_max: 100,
                ..RenderConfig::default()
            },
        ];
        for config in bad {
            assert!(matches!(
                render(&volume, &camera, &config),
                Err(DrrError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn ctvol_round_trips_exactly() {
        let volume = noise_volume((5, 4, 3));
        let path = temp_path("roundtrip.ctvol");
        save_ctvol(&volume, &path).unwrap();
        let loaded = load_ctvol(&path).unwrap();
        assert_eq!(loaded.dims(), volume.dims());
        assert_eq!(loaded.spacing(), volume.spacing());
        assert_eq!(loaded.origin(), volume.origin());
        assert_eq!(loaded.values, volume.values);
        let raw = std::fs::read(&path).unwrap();
        let newline = raw.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&raw[..newline], b"CTVOL 1 5 4 3 1 1 1 0 0 0");
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn ctvol_rejects_malformed_files() {
        let path = temp_path("malformed.ctvol");

        std::fs::write(&path, b"CTVOX 1 1 1 1 1 1 1 0 0 0\n\x00\x00").unwrap();
        assert!(matches!(load_ctvol(&path), Err(DrrError::Parse { .. })));

        std::fs::write(&path, b"CTVOL 1 2 1 1 1 1 1 0 0 0\n\x00\x00").unwrap();
        assert!(matches!(load_ctvol(&path), Err(DrrError::Parse { .. })));

        std::fs::write(&path, b"CTVOL 1 1 1 1 1 1 1 0 0 0\n\x00\x00\xff").unwrap();
        assert!(matches!(load_ctvol(&path), Err(DrrError::Parse { .. })));

        // 4000 HU is above the representable CT range.
        let mut out_of_range = b"CTVOL 1 1 1 1 1 1 1 0 0 0\n".to_vec();
        out_of_range.extend_from_slice(&4000i16.to_le_bytes());
        std::fs::write(&path, out_of_range).unwrap();
        assert!(matches!(load_ctvol(&path), Err(DrrError::InvalidVolume(_))));

        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn obj_loader_reads_the_minimal_subset() {
        let path = temp_path("mesh.obj");
        std::fs::write(
            &path,
            "# comment\nv 0 0 100\nv 10 0 100\nv 0 10 100\nvn 0 0 1\nvt 0 0\ns off\nf 1/1/1 2/2/1 3/3/1\n",
        )
        .unwrap();
        let mesh = load_obj_mesh(&path).unwrap();
        assert_eq!(mesh.vertices().len(), 3);
        assert_eq!(mesh.faces(), &[[0, 1, 2]]);
        assert_relative_eq!(mesh.vertices()[1].x, 10.0);

        std::fs::write(&path, "v 0 0 0\nf 1 2 1\n").unwrap();
        assert!(matches!(load_obj_mesh(&path), Err(DrrError::Parse { .. })));
        std::fs::write(&path, "v 0 0 0\nf 0 1 1\n").unwrap();
        assert!(matches!(load_obj_mesh(&path), Err(DrrError::Parse { .. })));
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\n").unwrap();
        assert!(matches!(load_obj_mesh(&path), Err(DrrError::Parse { .. })));
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").unwrap();
        assert!(matches!(load_obj_mesh(&path), Err(DrrError::Parse { .. })));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn mesh_validation_checks_faces() {
        let verts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            TriangleMesh::new(verts.clone(), vec![]),
            Err(DrrError::InvalidMesh(_))
        ));
        assert!(matches!(
            TriangleMesh::new(verts, vec![[0, 1, 3]]),
            Err(DrrError::InvalidMesh(_))
        ));
    }

    #[test]
    fn triangle_projection_obeys_similar_triangles() {
        let camera = CameraGeometry::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 800.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            0.5,
            (64, 64),
            false,
        )
        .unwrap();
        let scale = 800.0 / 200.0;
        for &(x, y) in &[(10.0, -5.0), (-20.0, 15.0), (0.0, 0.0)] {
            let (px, py) = project_point(&camera, Point3::new(x, y, 200.0)).unwrap();
            assert_relative_eq!(px - 31.5, x * scale / 0.5, epsilon = 1e-6);
            assert_relative_eq!(py - 31.5, y * scale / 0.5, epsilon = 1e-6);
        }
        // Behind the focal point: never projects.
        assert!(project_point(&camera, Point3::new(0.0, 0.0, -50.0)).is_none());
    }

    /// Distance from a 2D point to the boundary of an axis-aligned square.
    fn square_boundary_distance(p: Point, cx: f64, cy: f64, half: f64) -> f64 {
        let dx = (p.x - cx).abs();
        let dy = (p.y - cy).abs();
        if dx <= half && dy <= half {
            (half - dx).min(half - dy)
        } else {
            ((dx - half).max(0.0).powi(2) + (dy - half).max(0.0).powi(2)).sqrt()
        }
    }

    fn cube_surface_mesh(center: Point3<f64>, half: f64, step: f64) -> TriangleMesh {
        let mut vertices = Vec::new();
        let n = (2.0 * half / step).round() as usize;
        let coord = |i: usize| -half + 2.0 * half * i as f64 / n as f64;
        for i in 0..=n {
            for j in 0..=n {
                let (a, b) = (coord(i), coord(j));
                for s in [-half, half] {
                    vertices.push(center + Vector3::new(s, a, b));
                    vertices.push(center + Vector3::new(a, s, b));
                    vertices.push(center + Vector3::new(a, b, s));
                }
            }
        }
        TriangleMesh::new(vertices, vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn cube_outline_hugs_the_projected_square() {
        let camera = CameraGeometry::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 1000.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            1.0,
            (256, 256),
            false,
        )
        .unwrap();
        let mesh = cube_surface_mesh(Point3::new(0.0, 0.0, 500.0), 50.0, 0.5);
        let closing_radius = 3;
        let (outline, mask) = project_mesh_ground_truth(&mesh, &camera, closing_radius).unwrap();

        // The near face (z = 450) sets the silhouette scale.
        let half = 50.0 * 1000.0 / 450.0;
        let tolerance = (closing_radius + 1) as f64;
        assert!(outline.vertices.len() > 100);
        for p in &outline.vertices {
            let d = square_boundary_distance(*p, 127.5, 127.5, half);
            assert!(d <= tolerance, "outline pixel {p} is {d} px from the square");
        }
        // Conversely the outline wraps the whole square.
        for k in 0..80 {
            let t = k as f64 / 80.0;
            let (x, y) = match k % 4 {
                0 => (127.5 - half + 2.0 * half * t, 127.5 - half),
                1 => (127.5 - half + 2.0 * half * t, 127.5 + half),
                2 => (127.5 - half, 127.5 - half + 2.0 * half * t),
                _ => (127.5 + half, 127.5 - half + 2.0 * half * t),
            };
            let d = outline.distance_to(&Point::new(x, y));
            assert!(d <= tolerance, "square point ({x}, {y}) is {d} px from the outline");
        }
        // Mask interior filled, exterior empty.
        assert_eq!(mask.get(128, 128), 255);
        assert_eq!(mask.get(4, 4), 0);
    }

    fn sphere_mesh(center: Point3<f64>, radius: f64, rings: usize, sectors: usize) -> TriangleMesh {
        let mut vertices = Vec::new();
        for i in 0..=rings {
            let theta = std::f64::consts::PI * i as f64 / rings as f64;
            for j in 0..sectors {
                let phi = std::f64::consts::TAU * j as f64 / sectors as f64;
                vertices.push(
                    center
                        + Vector3::new(
                            radius * theta.sin() * phi.cos(),
                            radius * theta.sin() * phi.sin(),
                            radius * theta.cos(),
                        ),
                );
            }
        }
        TriangleMesh::new(vertices, vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn sphere_outline_matches_the_analytic_silhouette() {
        let source_detector = 1000.0;
        let source_object = 500.0;
        let rho = 50.0;
        let camera = CameraGeometry::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, source_detector),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            1.0,
            (256, 256),
            false,
        )
        .unwrap();
        let mesh = sphere_mesh(Point3::new(0.0, 0.0, source_object), rho, 220, 440);
        let (outline, _) = project_mesh_ground_truth(&mesh, &camera, 3).unwrap();

        let silhouette_radius =
            source_detector * rho / (source_object * source_object - rho * rho).sqrt();
        for p in &outline.vertices {
            let r = ((p.x - 127.5).powi(2) + (p.y - 127.5).powi(2)).sqrt();
            assert!(
                (r - silhouette_radius).abs() <= 2.0,
                "outline pixel {p} at radius {r}, expected {silhouette_radius}"
            );
        }
        for k in 0..64 {
            let angle = std::f64::consts::TAU * k as f64 / 64.0;
            let target = Point::new(
                127.5 + silhouette_radius * angle.cos(),
                127.5 + silhouette_radius * angle.sin(),
            );
            assert!(outline.distance_to(&target) <= 2.0);
        }
    }

    #[test]
    fn projection_behind_the_camera_is_empty() {
        let camera = straight_camera((64, 64), 1.0, false);
        let mesh = sphere_mesh(Point3::new(0.0, 0.0, -900.0), 20.0, 8, 16);
        assert!(matches!(
            project_mesh_ground_truth(&mesh, &camera, 3),
            Err(DrrError::EmptyProjection)
        ));
    }
}
