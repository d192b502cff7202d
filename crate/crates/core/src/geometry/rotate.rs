use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Point, Polygon, WHITE};

/// Sine and cosine of an angle in degrees, exact at multiples of 90.
pub fn sin_cos_deg(theta: f64) -> (f64, f64) {
    let r = theta.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Everything needed to map points between a source image and its rotated,
/// expanded canvas.
///
/// Forward: `q = R(theta) (p - c_original) + c_rotated` with
/// `R(theta) = [[cos, -sin], [sin, cos]]` acting on y-down coordinates, so a
/// positive angle turns content clockwise on screen.
/// Inverse: `p = R(-theta) (q - c_rotated) + c_original`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub theta: f64,
    pub c_original: Point,
    pub c_rotated: Point,
    pub canvas_size_rotated: (u32, u32),
    pub size_original: (u32, u32),
}

impl RotationSpec {
    /// Spec for rotating a `width x height` image by `theta` onto an expanded canvas.
    pub fn for_size(width: u32, height: u32, theta: f64) -> Self {
        let (s, c) = sin_cos_deg(theta);
        let span_x = (width.max(1) - 1) as f64;
        let span_y = (height.max(1) - 1) as f64;
        let extent_x = (span_x * c).abs() + (span_y * s).abs();
        let extent_y = (span_x * s).abs() + (span_y * c).abs();
        let new_w = (extent_x - 1e-9).ceil().max(0.0) as u32 + 1;
        let new_h = (extent_y - 1e-9).ceil().max(0.0) as u32 + 1;
        RotationSpec {
            theta,
            c_original: Point::new(span_x / 2.0, span_y / 2.0),
            c_rotated: Point::new((new_w - 1) as f64 / 2.0, (new_h - 1) as f64 / 2.0),
            canvas_size_rotated: (new_w, new_h),
            size_original: (width, height),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.theta.rem_euclid(360.0) == 0.0 && self.c_original == self.c_rotated
    }
}

pub fn forward_map_point(p: Point, spec: &RotationSpec) -> Point {
    let (s, c) = sin_cos_deg(spec.theta);
    let (dx, dy) = (p.x - spec.c_original.x, p.y - spec.c_original.y);
    Point::new(
        c * dx - s * dy + spec.c_rotated.x,
        s * dx + c * dy + spec.c_rotated.y,
    )
}

pub fn inverse_map_point(q: Point, spec: &RotationSpec) -> Point {
    let (s, c) = sin_cos_deg(spec.theta);
    let (dx, dy) = (q.x - spec.c_rotated.x, q.y - spec.c_rotated.y);
    Point::new(
        c * dx + s * dy + spec.c_original.x,
        -s * dx + c * dy + spec.c_original.y,
    )
}

/// Rotate onto a canvas large enough to hold the whole image; uncovered
/// pixels are white. Sampling is nearest-neighbour, which makes right-angle
/// rotations exact pixel permutations.
pub fn rotate_with_spec(image: &RgbImage, theta: f64) -> (RgbImage, RotationSpec) {
    let spec = RotationSpec::for_size(image.width(), image.height(), theta);
    if spec.is_identity() {
        return (image.clone(), spec);
    }
    let (w, h) = spec.canvas_size_rotated;
    let mut out = RgbImage::from_pixel(w, h, WHITE);
    let (src_w, src_h) = (image.width() as f64, image.height() as f64);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let p = inverse_map_point(Point::new(x as f64, y as f64), &spec);
        let (sx, sy) = (p.x.round(), p.y.round());
        if sx >= 0.0 && sy >= 0.0 && sx < src_w && sy < src_h {
            *px = *image.get_pixel(sx as u32, sy as u32);
        }
    }
    (out, spec)
}

/// Map a polygon from the rotated canvas back to the source image, clamping
/// each vertex to the source bounds.
pub fn inverse_rotate_polygon(poly: &Polygon, spec: &RotationSpec) -> Polygon {
    let max_x = (spec.size_original.0.max(1) - 1) as f64;
    let max_y = (spec.size_original.1.max(1) - 1) as f64;
    poly.map(|q| {
        let p = inverse_map_point(q, spec);
        Point::new(p.x.clamp(0.0, max_x), p.y.clamp(0.0, max_y))
    })
}
