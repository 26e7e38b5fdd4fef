//! 8-bit grayscale images with binary PGM (P5) reading and writing.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrayImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} pixels for {width}x{height}, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("bad PGM file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, GrayImageError> {
        if width == 0 || height == 0 {
            return Err(GrayImageError::EmptyDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(GrayImageError::LengthMismatch {
                width,
                height,
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, GrayImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        self.pixels[y * self.width + x] = value;
    }

    /// Set `(x, y)` if it lies inside the image; otherwise do nothing.
    pub fn set_checked(&mut self, x: i64, y: i64, value: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = value;
        }
    }

    /// Write as binary PGM (P5, maxval 255).
    pub fn save_pgm(&self, path: &Path) -> Result<(), GrayImageError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        w.flush()?;
        Ok(())
    }

    /// Read a binary PGM (P5, maxval 255). `#` comment lines in the header
    /// are accepted and ignored.
    pub fn load_pgm(path: &Path) -> Result<Self, GrayImageError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0usize;

        let mut next_token = |bytes: &[u8]| -> Result<String, GrayImageError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(GrayImageError::BadFormat("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };

        let magic = next_token(&bytes)?;
        if magic != "P5" {
            return Err(GrayImageError::BadFormat(format!(
                "expected magic `P5`, got `{magic}`"
            )));
        }
        let width: usize = next_token(&bytes)?
            .parse()
            .map_err(|_| GrayImageError::BadFormat("bad width".into()))?;
        let height: usize = next_token(&bytes)?
            .parse()
            .map_err(|_| GrayImageError::BadFormat("bad height".into()))?;
        let maxval: usize = next_token(&bytes)?
            .parse()
            .map_err(|_| GrayImageError::BadFormat("bad maxval".into()))?;
        if maxval != 255 {
            return Err(GrayImageError::BadFormat(format!(
                "only maxval 255 is supported, got {maxval}"
            )));
        }
        // Exactly one whitespace byte separates the header from the payload.
        pos += 1;
        if pos > bytes.len() || bytes.len() - pos < width * height {
            return Err(GrayImageError::BadFormat("payload truncated".into()));
        }
        Self::new(width, height, bytes[pos..pos + width * height].to_vec())
    }
}
