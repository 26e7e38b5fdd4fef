//! Plain-text readers and writers for point lists, polylines and fit records.
//!
//! Point and polyline files hold one `x,y` pair per line. A polyline file may
//! start with a line containing just `closed` to mark a closed contour.
//! Blank lines are ignored. All numbers are written with 17 significant
//! digits so values round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Circle, GeometryError, Point, Polyline};
use crate::transform::SimilarityTransform2D;

#[derive(Debug, Error)]
pub enum TextIoError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    InvalidGeometry {
        path: String,
        source: GeometryError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> TextIoError {
    TextIoError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, field: &str, text: &str) -> Result<f64, TextIoError> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| parse_error(path, line, format!("bad {field} `{}`", text.trim())))
}

/// Parse one `x,y` line into a point.
fn parse_point_line(path: &Path, line_no: usize, line: &str) -> Result<Point, TextIoError> {
    let mut parts = line.splitn(2, ',');
    let x = parts
        .next()
        .ok_or_else(|| parse_error(path, line_no, "missing x coordinate"))?;
    let y = parts
        .next()
        .ok_or_else(|| parse_error(path, line_no, format!("expected `x,y`, got `{line}`")))?;
    Ok(Point::new(
        parse_f64(path, line_no, "x coordinate", x)?,
        parse_f64(path, line_no, "y coordinate", y)?,
    ))
}

/// Read a point list: one `x,y` per line.
pub fn load_points(path: &Path) -> Result<Vec<Point>, TextIoError> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        points.push(parse_point_line(path, i + 1, line)?);
    }
    Ok(points)
}

/// Write a point list: one `x,y` per line.
pub fn save_points(path: &Path, points: &[Point]) -> Result<(), TextIoError> {
    let mut out = String::new();
    for p in points {
        writeln!(out, "{:.17e},{:.17e}", p.x, p.y).expect("writing to String cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a polyline: an optional leading `closed` line, then one `x,y` per
/// line.
pub fn load_polyline(path: &Path) -> Result<Polyline, TextIoError> {
    let text = std::fs::read_to_string(path)?;
    let mut closed = false;
    let mut points = Vec::new();
    let mut seen_point = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "closed" {
            if seen_point {
                return Err(parse_error(
                    path,
                    i + 1,
                    "`closed` must appear before the first vertex",
                ));
            }
            closed = true;
            continue;
        }
        points.push(parse_point_line(path, i + 1, line)?);
        seen_point = true;
    }
    Polyline::new(points, closed).map_err(|source| TextIoError::InvalidGeometry {
        path: path.display().to_string(),
        source,
    })
}

/// Write a polyline in the format accepted by [`load_polyline`].
pub fn save_polyline(path: &Path, polyline: &Polyline) -> Result<(), TextIoError> {
    let mut out = String::new();
    if polyline.closed {
        out.push_str("closed\n");
    }
    for p in &polyline.vertices {
        writeln!(out, "{:.17e},{:.17e}", p.x, p.y).expect("writing to String cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Format a circle-fit record: `cx cy r cost n_points method`.
pub fn format_circle_record(
    circle: &Circle,
    cost: f64,
    n_points: usize,
    method: &str,
) -> String {
    format!(
        "{:.17e} {:.17e} {:.17e} {:.17e} {} {}\n",
        circle.cx, circle.cy, circle.r, cost, n_points, method
    )
}

/// Parse the leading `cx cy r` of a whitespace-separated circle record;
/// trailing fields are ignored.
pub fn parse_circle_record(path: &Path, text: &str) -> Result<Circle, TextIoError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < 3 {
        return Err(parse_error(
            path,
            1,
            format!("expected at least `cx cy r`, got `{}`", text.trim()),
        ));
    }
    let cx = parse_f64(path, 1, "cx", fields[0])?;
    let cy = parse_f64(path, 1, "cy", fields[1])?;
    let r = parse_f64(path, 1, "r", fields[2])?;
    Circle::new(cx, cy, r).map_err(|source| TextIoError::InvalidGeometry {
        path: path.display().to_string(),
        source,
    })
}

/// Read a circle record file written by [`format_circle_record`] (or a bare
/// `cx cy r` line).
pub fn load_circle_record(path: &Path) -> Result<Circle, TextIoError> {
    let text = std::fs::read_to_string(path)?;
    parse_circle_record(path, &text)
}

/// Format a registration record: `rotation scale tx ty reflected`.
pub fn format_transform_record(t: &SimilarityTransform2D) -> String {
    format!(
        "{:.17e} {:.17e} {:.17e} {:.17e} {}\n",
        t.rotation,
        t.scale,
        t.tx,
        t.ty,
        if t.reflected { 1 } else { 0 }
    )
}
