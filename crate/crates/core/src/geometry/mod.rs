//! Coordinate math for the masking pipeline.
//!
//! Pixel `(i, j)` sits at the continuous point `(i, j)`: x grows rightward,
//! y grows downward, origin at the top-left pixel. An image of width `w`
//! therefore spans `[0, w-1]` horizontally, and bounding boxes use inclusive
//! integer corners.

mod image_ops;
mod mask;
mod polygon;
mod rotate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use image_ops::{
    apply_mask, crop, image_hash, load_rgb, masked_pixel_count, save_image, whiteout_outside_mask,
    Crop, BLACK, WHITE,
};
pub use mask::{rasterize, BinaryMask};
pub use polygon::{
    bbox_to_polygon, column_major_corners, polygon_orientation_angle, realign_to_original,
};
pub use rotate::{
    forward_map_point, inverse_map_point, inverse_rotate_polygon, rotate_with_spec, sin_cos_deg,
    RotationSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("bounding box {0:?} does not intersect a {1}x{2} image")]
    EmptyIntersection(BBox, u32, u32),
    #[error("mask is {mask_w}x{mask_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        mask_w: u32,
        mask_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("degenerate polygon")]
    DegeneratePolygon,
    #[error("polygon needs at least 3 finite vertices, got {0}")]
    TooFewVertices(usize),
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("image has zero area")]
    ZeroArea,
    #[error("image io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Inclusive pixel box `[x_top, y_top, x_bottom, y_bottom]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BBox {
    pub x_top: u32,
    pub y_top: u32,
    pub x_bottom: u32,
    pub y_bottom: u32,
}

impl BBox {
    pub fn new(x_top: u32, y_top: u32, x_bottom: u32, y_bottom: u32) -> Result<Self, GeometryError> {
        if x_top > x_bottom || y_top > y_bottom {
            return Err(GeometryError::InvalidBBox(format!(
                "[{x_top}, {y_top}, {x_bottom}, {y_bottom}] has inverted corners"
            )));
        }
        Ok(Self {
            x_top,
            y_top,
            x_bottom,
            y_bottom,
        })
    }

    /// The whole `width x height` image.
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            x_top: 0,
            y_top: 0,
            x_bottom: width.saturating_sub(1),
            y_bottom: height.saturating_sub(1),
        }
    }

    pub fn width(&self) -> u32 {
        self.x_bottom - self.x_top + 1
    }

    pub fn height(&self) -> u32 {
        self.y_bottom - self.y_top + 1
    }

    pub fn is_degenerate(&self) -> bool {
        self.x_top == self.x_bottom || self.y_top == self.y_bottom
    }

    pub fn top_left(&self) -> Point {
        Point::new(self.x_top as f64, self.y_top as f64)
    }

    /// Intersection with a `width x height` image, if any.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BBox> {
        if width == 0 || height == 0 || self.x_top >= width || self.y_top >= height {
            return None;
        }
        Some(BBox {
            x_top: self.x_top,
            y_top: self.y_top,
            x_bottom: self.x_bottom.min(width - 1),
            y_bottom: self.y_bottom.min(height - 1),
        })
    }

    /// Smallest box containing every vertex, rounded outward and clipped at 0.
    pub fn enclosing(points: &[Point]) -> Option<BBox> {
        let first = points.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let to_u = |v: f64| v.max(0.0) as u32;
        Some(BBox {
            x_top: to_u(x0.floor()),
            y_top: to_u(y0.floor()),
            x_bottom: to_u(x1.ceil()),
            y_bottom: to_u(y1.ceil()),
        })
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x_top, b.y_top, b.x_bottom, b.y_bottom]
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Closed ring of at least three vertices. Serializes as `[[x, y], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<[f64; 2]>", try_from = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::TooFewVertices(
                vertices.iter().filter(|p| p.x.is_finite() && p.y.is_finite()).count(),
            ));
        }
        Ok(Self { vertices })
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self, GeometryError> {
        Self::new(pairs.iter().map(|p| Point::new(p[0], p[1])).collect())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.vertices.iter().map(|p| [p.x, p.y]).collect()
    }

    /// Absolute shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        twice.abs() / 2.0
    }

    /// Zero-area rings (points, segments) are kept but flagged.
    pub fn is_degenerate(&self) -> bool {
        self.area() <= 1e-12
    }

    /// Top-most, then left-most vertex coordinate; used for reading order.
    pub fn reading_key(&self) -> (f64, f64) {
        let y = self.vertices.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let x = self.vertices.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        (y, x)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    pub(crate) fn map(&self, f: impl Fn(Point) -> Point) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
        }
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.to_pairs()
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = GeometryError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Polygon::from_pairs(&v)
    }
}
