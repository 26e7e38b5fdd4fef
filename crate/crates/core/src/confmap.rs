//! Segmentation confidence maps: dense per-pixel scores in `[0, 1]`.
//!
//! A map is stored row-major, `W * H` values, pixel `(x, y)` at index
//! `y * W + x`. File format `CMAP` v1: a single ASCII header line
//! `CMAP 1 <width> <height>\n` followed by `width * height` little-endian
//! `f32` values in row-major order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error)]
pub enum ConfidenceMapError {
    #[error("map dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} values for {width}x{height}, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("value at ({x}, {y}) is {value}, outside [0, 1]")]
    ValueOutOfRange { x: usize, y: usize, value: f64 },
    #[error("bad CMAP header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A `width x height` grid of confidence values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    /// Build a map from row-major values, validating shape and range.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ConfidenceMapError> {
        if width == 0 || height == 0 {
            return Err(ConfidenceMapError::EmptyDimensions { width, height });
        }
        if values.len() != width * height {
            return Err(ConfidenceMapError::LengthMismatch {
                width,
                height,
                expected: width * height,
                actual: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfidenceMapError::ValueOutOfRange {
                    x: i % width,
                    y: i / width,
                    value: v,
                });
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// An all-zero map.
    pub fn zeros(width: usize, height: usize) -> Result<Self, ConfidenceMapError> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at integer pixel `(x, y)`. Panics if out of bounds.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.values[y * self.width + x]
    }

    /// Set pixel `(x, y)`, clamping the value into `[0, 1]`.
    pub fn set_clamped(&mut self, x: usize, y: usize, value: f64) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.values[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    /// Bilinear interpolation at a continuous position; positions outside the
    /// pixel-center rectangle read as 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let read = |ix: i64, iy: i64| -> f64 {
            if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
                0.0
            } else {
                self.values[iy as usize * self.width + ix as usize]
            }
        };
        if !(x.is_finite() && y.is_finite()) {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = read(x0, y0);
        let v10 = read(x0 + 1, y0);
        let v01 = read(x0, y0 + 1);
        let v11 = read(x0 + 1, y0 + 1);
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bottom = v01 * (1.0 - fx) + v11 * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Integer coordinates of all pixels with value strictly greater than
    /// `tau`, in row-major scan order.
    pub fn threshold_foreground(&self, tau: f64) -> Vec<Point> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.values[y * self.width + x] > tau {
                    out.push(Point::new(x as f64, y as f64));
                }
            }
        }
        out
    }

    /// Write in `CMAP` v1 format.
    pub fn save(&self, path: &Path) -> Result<(), ConfidenceMapError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(w, "CMAP 1 {} {}\n", self.width, self.height)?;
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read from `CMAP` v1 format.
    pub fn load(path: &Path) -> Result<Self, ConfidenceMapError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut header = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            r.read_exact(&mut byte).map_err(|_| {
                ConfidenceMapError::BadHeader("unterminated header line".into())
            })?;
            if byte[0] == b'\n' {
                break;
            }
            if header.len() > 128 {
                return Err(ConfidenceMapError::BadHeader("header line too long".into()));
            }
            header.push(byte[0]);
        }
        let header = String::from_utf8(header)
            .map_err(|_| ConfidenceMapError::BadHeader("header is not UTF-8".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "CMAP" || fields[1] != "1" {
            return Err(ConfidenceMapError::BadHeader(format!(
                "expected `CMAP 1 <width> <height>`, got `{header}`"
            )));
        }
        let width: usize = fields[2]
            .parse()
            .map_err(|_| ConfidenceMapError::BadHeader(format!("bad width `{}`", fields[2])))?;
        let height: usize = fields[3]
            .parse()
            .map_err(|_| ConfidenceMapError::BadHeader(format!("bad height `{}`", fields[3])))?;
        if width == 0 || height == 0 {
            return Err(ConfidenceMapError::EmptyDimensions { width, height });
        }
        let mut buf = vec![0u8; width * height * 4];
        r.read_exact(&mut buf).map_err(|_| {
            ConfidenceMapError::BadHeader(format!(
                "file truncated: expected {} payload bytes",
                buf.len()
            ))
        })?;
        let values: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(width, height, values)
    }
}
