//! Shared geometric primitives: points, circles and polylines.
//!
//! Coordinate convention used everywhere in this crate: `(x, y)` with `x` the
//! column index and `y` the row index, origin at the top-left of the image,
//! pixel centers at integer coordinates.

use thiserror::Error;

/// A 2D point in pixel units.
pub type Point = nalgebra::Point2<f64>;

/// An unordered collection of 2D points. May be empty.
pub type PointSet = Vec<Point>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("circle radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("circle center must be finite, got ({0}, {1})")]
    InvalidCenter(f64, f64),
    #[error("polyline needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polyline vertices {0} and {1} coincide")]
    DegenerateSegment(usize, usize),
    #[error("polyline vertex {0} is not finite")]
    NonFiniteVertex(usize),
}

/// A circle `(cx, cy, r)` in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    /// Build a circle, rejecting non-finite fields and non-positive radii.
    pub fn new(cx: f64, cy: f64, r: f64) -> Result<Self, GeometryError> {
        if !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::InvalidCenter(cx, cy));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(GeometryError::InvalidRadius(r));
        }
        Ok(Self { cx, cy, r })
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Distance from `p` to the circle outline (non-negative).
    pub fn distance_to(&self, p: &Point) -> f64 {
        ((p - self.center()).norm() - self.r).abs()
    }
}

/// An ordered chain of vertices, optionally closed into a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<Point>,
    pub closed: bool,
}

impl Polyline {
    /// Build a polyline, rejecting fewer than 2 vertices, non-finite
    /// coordinates and coincident consecutive vertices (including the closing
    /// edge of a closed polyline).
    pub fn new(vertices: Vec<Point>, closed: bool) -> Result<Self, GeometryError> {
        if vertices.len() < 2 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite()) {
                return Err(GeometryError::NonFiniteVertex(i));
            }
        }
        for i in 1..vertices.len() {
            if vertices[i] == vertices[i - 1] {
                return Err(GeometryError::DegenerateSegment(i - 1, i));
            }
        }
        if closed && vertices.first() == vertices.last() && vertices.len() > 2 {
            return Err(GeometryError::DegenerateSegment(vertices.len() - 1, 0));
        }
        Ok(Self { vertices, closed })
    }

    pub fn n_segments(&self) -> usize {
        if self.closed {
            self.vertices.len()
        } else {
            self.vertices.len() - 1
        }
    }

    /// Iterate over the segments `(start, end)`, including the closing
    /// segment for closed polylines.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.n_segments();
        (0..n).map(move |i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % self.vertices.len()];
            (a, b)
        })
    }

    /// Minimal Euclidean distance from `p` to the polyline.
    pub fn distance_to(&self, p: &Point) -> f64 {
        self.segments()
            .map(|(a, b)| point_segment_distance(p, &a, &b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Axis-aligned bounding box `(min, max)` of the vertices.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices[1..] {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }
}

/// Exact distance from point `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Vertices of a regular polygon approximating `circle`, at roughly
/// one-pixel arc spacing (at least 32 vertices), as a closed polyline.
pub fn circle_polyline(circle: &Circle) -> Polyline {
    let n = ((2.0 * std::f64::consts::PI * circle.r).ceil() as usize).clamp(32, 4096);
    let vertices = (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            Point::new(
                circle.cx + circle.r * theta.cos(),
                circle.cy + circle.r * theta.sin(),
            )
        })
        .collect();
    Polyline::new(vertices, true).expect("regular polygon is a valid polyline")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn circle_rejects_bad_fields() {
        assert!(Circle::new(0.0, 0.0, 0.0).is_err());
        assert!(Circle::new(0.0, 0.0, -1.0).is_err());
        assert!(Circle::new(f64::NAN, 0.0, 1.0).is_err());
        assert!(Circle::new(0.0, f64::INFINITY, 1.0).is_err());
        assert!(Circle::new(3.0, -2.0, 0.5).is_ok());
    }

    #[test]
    fn polyline_rejects_degenerate_input() {
        assert!(Polyline::new(vec![Point::new(0.0, 0.0)], false).is_err());
        assert!(Polyline::new(
            vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0)],
            false
        )
        .is_err());
        assert!(Polyline::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)],
            false
        )
        .is_ok());
    }

    #[test]
    fn segment_distance_perpendicular_and_endpoint() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        // Perpendicular foot inside the segment.
        assert_relative_eq!(
            point_segment_distance(&Point::new(5.0, 2.0), &a, &b),
            2.0
        );
        // Beyond the end: distance to the endpoint, not the infinite line.
        assert_relative_eq!(
            point_segment_distance(&Point::new(13.0, 4.0), &a, &b),
            5.0
        );
    }

    #[test]
    fn closed_polyline_includes_closing_segment() {
        let square = Polyline::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(10.0, 0.0),
                Point::new(10.0, 10.0),
                Point::new(0.0, 10.0),
            ],
            true,
        )
        .unwrap();
        assert_eq!(square.n_segments(), 4);
        // A point next to the closing edge (x = 0).
        assert_relative_eq!(square.distance_to(&Point::new(-3.0, 5.0)), 3.0);
    }

    #[test]
    fn circle_polyline_stays_near_circle() {
        let c = Circle::new(10.0, -4.0, 25.0).unwrap();
        let poly = circle_polyline(&c);
        assert!(poly.closed);
        for v in &poly.vertices {
            assert_relative_eq!((v - c.center()).norm(), c.r, epsilon = 1e-9);
        }
        // Max sagitta of the polygon approximation stays well below 0.01 px.
        let theta = std::f64::consts::PI / poly.vertices.len() as f64;
        assert!(c.r * (1.0 - theta.cos()) < 1e-2);
    }
}
