use super::{BBox, GeometryError, Point, Polygon};

/// Box as a ring in TL, TR, BR, BL order. Zero-area boxes produce a
/// degenerate ring that still rasterizes to the pixels it touches.
pub fn bbox_to_polygon(bbox: &BBox) -> Polygon {
    let (x0, y0) = (bbox.x_top as f64, bbox.y_top as f64);
    let (x1, y1) = (bbox.x_bottom as f64, bbox.y_bottom as f64);
    Polygon::new(vec![
        Point::new(x0, y0),
        Point::new(x1, y0),
        Point::new(x1, y1),
        Point::new(x0, y1),
    ])
    .expect("four finite vertices")
}

/// Corner listing `[(x_top, y_top), (x_top, y_bottom), (x_bottom, y_top),
/// (x_bottom, y_bottom)]`. Not a simple ring; kept for manifest metadata only.
pub fn column_major_corners(bbox: &BBox) -> [[u32; 2]; 4] {
    [
        [bbox.x_top, bbox.y_top],
        [bbox.x_top, bbox.y_bottom],
        [bbox.x_bottom, bbox.y_top],
        [bbox.x_bottom, bbox.y_bottom],
    ]
}

/// Shift every vertex by `origin` (the detected object's top-left corner).
pub fn realign_to_original(poly: &Polygon, origin: Point) -> Polygon {
    poly.translated(origin.x, origin.y)
}

/// Angle in degrees, in `(-90, 90]`, between the principal axis of the
/// vertex set and the horizontal. Uses the same y-down convention as
/// rotation, so rotating an image by minus this angle levels the polygon.
/// Isotropic vertex sets report 0.
pub fn polygon_orientation_angle(poly: &Polygon) -> Result<f64, GeometryError> {
    let v = poly.vertices();
    let n = v.len() as f64;
    let mx = v.iter().map(|p| p.x).sum::<f64>() / n;
    let my = v.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in v {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let scale = sxx + syy;
    if scale <= 1e-18 {
        return Err(GeometryError::DegeneratePolygon);
    }
    let (a, b) = ((sxx - syy) / scale, 2.0 * sxy / scale);
    if a.abs() <= 1e-12 && b.abs() <= 1e-12 {
        return Ok(0.0);
    }
    // Eigenvector of the larger eigenvalue of [[sxx, sxy], [sxy, syy]].
    let mut angle = 0.5 * b.atan2(a).to_degrees();
    if angle <= -90.0 + 1e-12 {
        angle += 180.0;
    }
    if angle > 90.0 {
        angle -= 180.0;
    }
    Ok(angle)
}

#[cfg(test)]
mod tests {
    use super::super::{forward_map_point, inverse_rotate_polygon, RotationSpec};
    use super::*;

    #[test]
    fn box_ring_order() {
        let p = bbox_to_polygon(&BBox::new(0, 0, 10, 5).unwrap());
        assert_eq!(p.to_pairs(), vec![[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]]);
        assert!(!p.is_degenerate());
        assert!(bbox_to_polygon(&BBox::new(3, 3, 3, 3).unwrap()).is_degenerate());
    }

    #[test]
    fn zigzag_order_preserved() {
        let b = BBox::new(1, 2, 3, 4).unwrap();
        assert_eq!(column_major_corners(&b), [[1, 2], [1, 4], [3, 2], [3, 4]]);
    }

    #[test]
    fn realign_translates() {
        let p = Polygon::from_pairs(&[[3.0, 4.0], [5.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(realign_to_original(&p, Point::ORIGIN), p);
        let moved = realign_to_original(&p, Point::new(100.0, 50.0));
        assert_eq!(moved.vertices()[0], Point::new(103.0, 54.0));
    }

    fn rect(w: f64, h: f64) -> Polygon {
        Polygon::from_pairs(&[[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]).unwrap()
    }

    #[test]
    fn axis_aligned_angles() {
        assert_eq!(polygon_orientation_angle(&rect(40.0, 5.0)).unwrap(), 0.0);
        assert_eq!(polygon_orientation_angle(&rect(5.0, 40.0)).unwrap(), 90.0);
        assert_eq!(polygon_orientation_angle(&rect(5.0, 5.0)).unwrap(), 0.0);
    }

    #[test]
    fn rotated_rectangle_angle() {
        // Construct by rotating a wide rectangle about its center.
        for theta in [30.0, -30.0, 10.0, 75.0, -89.0] {
            let (s, c) = (f64::to_radians(theta).sin(), f64::to_radians(theta).cos());
            let poly = rect(60.0, 8.0).map(|p| {
                let (dx, dy) = (p.x - 30.0, p.y - 4.0);
                Point::new(c * dx - s * dy + 100.0, s * dx + c * dy + 100.0)
            });
            let got = polygon_orientation_angle(&poly).unwrap();
            assert!((got - theta).abs() < 1e-6, "theta {theta} got {got}");
        }
    }

    #[test]
    fn collinear_and_degenerate() {
        let line = Polygon::from_pairs(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!((polygon_orientation_angle(&line).unwrap() - 45.0).abs() < 1e-9);
        let point = Polygon::from_pairs(&[[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]]).unwrap();
        assert_eq!(polygon_orientation_angle(&point), Err(GeometryError::DegeneratePolygon));
    }

    #[test]
    fn leveling_by_negative_angle() {
        // A polygon tilted by phi, rotated by -phi, comes out horizontal.
        let tilted = rect(50.0, 6.0).map(|p| {
            let (s, c) = (12f64.to_radians().sin(), 12f64.to_radians().cos());
            Point::new(c * p.x - s * p.y + 40.0, s * p.x + c * p.y + 20.0)
        });
        let phi = polygon_orientation_angle(&tilted).unwrap();
        let spec = RotationSpec::for_size(120, 90, -phi);
        let level = tilted.map(|p| forward_map_point(p, &spec));
        assert!(polygon_orientation_angle(&level).unwrap().abs() < 1e-9);
    }

    #[test]
    fn quarter_turn_composition_by_hand() {
        // 20x10 crop rotated by 90 -> 10x20 canvas. c_original = (9.5, 4.5),
        // c_rotated = (4.5, 9.5). Canvas point (2, 3): d = (-2.5, -6.5),
        // R(-90) d = (-6.5, 2.5), + c_original = (3, 7), + origin (100, 50) = (103, 57).
        let spec = RotationSpec::for_size(20, 10, 90.0);
        let poly = Polygon::from_pairs(&[[2.0, 3.0], [4.0, 3.0], [4.0, 8.0]]).unwrap();
        let out = realign_to_original(&inverse_rotate_polygon(&poly, &spec), Point::new(100.0, 50.0));
        assert_eq!(out.vertices()[0], Point::new(103.0, 57.0));
        assert_eq!(out.vertices()[1], Point::new(103.0, 55.0));
        assert_eq!(out.vertices()[2], Point::new(108.0, 55.0));
    }
}
