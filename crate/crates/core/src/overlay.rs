//! Rendering confidence maps to 8-bit images and drawing fitted geometry on
//! top of them. Draw calls return the touched pixels so callers can verify
//! the base image is untouched elsewhere.

use crate::confmap::ConfidenceMap;
use crate::geometry::{Circle, Point, Polyline};
use crate::gray::GrayImage;

/// Confidence values in [0, 1] scaled to 8-bit grays, rounding half up.
pub fn confmap_to_gray(map: &ConfidenceMap) -> GrayImage {
    let mut image = GrayImage::filled(map.width(), map.height(), 0)
        .expect("confidence maps always have nonzero dimensions");
    for y in 0..map.height() {
        for x in 0..map.width() {
            image.set(x, y, (map.get(x, y) * 255.0).round() as u8);
        }
    }
    image
}

fn plot(image: &mut GrayImage, x: f64, y: f64, intensity: u8, drawn: &mut Vec<(usize, usize)>) {
    let (ix, iy) = (x.round() as i64, y.round() as i64);
    if ix >= 0 && iy >= 0 && (ix as usize) < image.width() && (iy as usize) < image.height() {
        image.set(ix as usize, iy as usize, intensity);
        drawn.push((ix as usize, iy as usize));
    }
}

/// Draw a circle outline. Returns the pixels that were written.
pub fn draw_circle(image: &mut GrayImage, circle: &Circle, intensity: u8) -> Vec<(usize, usize)> {
    let steps = ((std::f64::consts::TAU * circle.r * 2.0).ceil() as usize).max(16);
    let mut drawn = Vec::new();
    for k in 0..steps {
        let angle = std::f64::consts::TAU * k as f64 / steps as f64;
        plot(
            image,
            circle.cx + circle.r * angle.cos(),
            circle.cy + circle.r * angle.sin(),
            intensity,
            &mut drawn,
        );
    }
    drawn.sort_unstable();
    drawn.dedup();
    drawn
}

/// Draw a polyline (its closing segment too, when closed). Returns the pixels
/// that were written.
pub fn draw_polyline(
    image: &mut GrayImage,
    polyline: &Polyline,
    intensity: u8,
) -> Vec<(usize, usize)> {
    let mut drawn = Vec::new();
    for (a, b) in polyline.segments() {
        let length = (b - a).norm();
        let steps = (length * 2.0).ceil() as usize + 1;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let p = a + (b - a) * t;
            plot(image, p.x, p.y, intensity, &mut drawn);
        }
    }
    drawn.sort_unstable();
    drawn.dedup();
    drawn
}

/// Draw a plus-shaped marker centered on `at`. Returns the pixels written.
pub fn draw_cross(
    image: &mut GrayImage,
    at: Point,
    arm: usize,
    intensity: u8,
) -> Vec<(usize, usize)> {
    let mut drawn = Vec::new();
    let arm = arm as i64;
    for d in -arm..=arm {
        plot(image, at.x + d as f64, at.y, intensity, &mut drawn);
        plot(image, at.x, at.y + d as f64, intensity, &mut drawn);
    }
    drawn.sort_unstable();
    drawn.dedup();
    drawn
}

#[cfg(test)]
mod tests {
    use super::*;

    fn untouched_outside(
        before: &GrayImage,
        after: &GrayImage,
        drawn: &[(usize, usize)],
        intensity: u8,
    ) {
        for y in 0..before.height() {
            for x in 0..before.width() {
                if drawn.contains(&(x, y)) {
                    assert_eq!(after.get(x, y), intensity);
                } else {
                    assert_eq!(after.get(x, y), before.get(x, y), "pixel ({x}, {y}) changed");
                }
            }
        }
    }

    #[test]
    fn confmap_scaling_hits_the_gray_endpoints() {
        let mut map = ConfidenceMap::zeros(3, 1).unwrap();
        map.set_clamped(1, 0, 0.5);
        map.set_clamped(2, 0, 1.0);
        let image = confmap_to_gray(&map);
        assert_eq!(image.get(0, 0), 0);
        assert_eq!(image.get(1, 0), 128);
        assert_eq!(image.get(2, 0), 255);
    }

    #[test]
    fn circle_pixels_lie_on_the_circle_and_nothing_else_changes() {
        let before = GrayImage::filled(64, 64, 40).unwrap();
        let mut after = before.clone();
        let circle = Circle::new(30.0, 32.0, 20.0).unwrap();
        let drawn = draw_circle(&mut after, &circle, 255);
        assert!(!drawn.is_empty());
        for &(x, y) in &drawn {
            let d = circle.distance_to(&Point::new(x as f64, y as f64));
            assert!(d <= 0.75, "pixel ({x}, {y}) is {d} px off the circle");
        }
        untouched_outside(&before, &after, &drawn, 255);
    }

    #[test]
    fn circle_drawing_clips_to_the_image() {
        let mut image = GrayImage::filled(16, 16, 0).unwrap();
        let circle = Circle::new(0.0, 0.0, 10.0).unwrap();
        let drawn = draw_circle(&mut image, &circle, 200);
        assert!(!drawn.is_empty());
        assert!(drawn.iter().all(|&(x, y)| x < 16 && y < 16));
    }

    #[test]
    fn polyline_drawing_covers_every_segment() {
        let before = GrayImage::filled(32, 32, 10).unwrap();
        let mut after = before.clone();
        let square = Polyline::new(
            vec![
                Point::new(5.0, 5.0),
                Point::new(25.0, 5.0),
                Point::new(25.0, 25.0),
                Point::new(5.0, 25.0),
            ],
            true,
        )
        .unwrap();
        let drawn = draw_polyline(&mut after, &square, 255);
        for &(x, y) in &drawn {
            let d = square.distance_to(&Point::new(x as f64, y as f64));
            assert!(d <= 0.75);
        }
        // All four corners (closing segment included) are drawn.
        for corner in [(5, 5), (25, 5), (25, 25), (5, 25)] {
            assert!(drawn.contains(&corner));
        }
        // Midpoint of the closing segment too.
        assert!(drawn.contains(&(5, 15)));
        untouched_outside(&before, &after, &drawn, 255);
    }

    #[test]
    fn cross_marks_both_arms() {
        let before = GrayImage::filled(16, 16, 0).unwrap();
        let mut after = before.clone();
        let drawn = draw_cross(&mut after, Point::new(8.0, 8.0), 2, 180);
        assert_eq!(drawn.len(), 9);
        for (dx, dy) in [(0i64, 0i64), (-2, 0), (2, 0), (0, -2), (0, 2)] {
            assert!(drawn.contains(&((8 + dx) as usize, (8 + dy) as usize)));
        }
        untouched_outside(&before, &after, &drawn, 180);
    }
}
