use serde::{Deserialize, Serialize};

use super::{BBox, GeometryError, Polygon};

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, GeometryError> {
        if bits.len() != width as usize * height as usize {
            return Err(GeometryError::DimensionMismatch {
                mask_w: width,
                mask_h: height,
                image_w: bits.len() as u32,
                image_h: 1,
            });
        }
        Ok(Self { width, height, bits })
    }

    /// Decode alternating run lengths, starting with a run of zeros.
    pub fn from_runs(width: u32, height: u32, counts: &[u64]) -> Result<Self, GeometryError> {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        let mut value = false;
        for &n in counts {
            bits.extend(std::iter::repeat_n(value, n as usize));
            value = !value;
        }
        Self::from_bits(width, height, bits)
    }

    /// Inverse of [`BinaryMask::from_runs`].
    pub fn to_runs(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn area(&self) -> usize {
        self.bits.len()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dimensions() == other.dimensions()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Copy into a `width x height` canvas with this mask's top-left at
    /// `(x0, y0)`; parts outside the canvas are dropped.
    pub fn placed(&self, width: u32, height: u32, x0: u32, y0: u32) -> BinaryMask {
        let mut out = BinaryMask::new(width, height);
        for y in 0..self.height {
            let ty = y0 as u64 + y as u64;
            if ty >= height as u64 {
                break;
            }
            for x in 0..self.width {
                let tx = x0 as u64 + x as u64;
                if tx >= width as u64 {
                    break;
                }
                if self.get(x, y) {
                    out.set(tx as u32, ty as u32, true);
                }
            }
        }
        out
    }

    /// Set every pixel of the inclusive box (clipped).
    pub fn fill_bbox(&mut self, bbox: &BBox) {
        if let Some(b) = bbox.clamp_to(self.width, self.height) {
            for y in b.y_top..=b.y_bottom {
                for x in b.x_top..=b.x_bottom {
                    self.set(x, y, true);
                }
            }
        }
    }
}

const ON_EDGE: f64 = 1e-9;

/// Even-odd scanline fill of each polygon, unioned.
///
/// A pixel is set when its center lies inside a polygon or on its boundary,
/// so an inclusive box `[x0, y0, x1, y1]` covers exactly
/// `(x1-x0+1) * (y1-y0+1)` pixels and a zero-area box covers one pixel.
pub fn rasterize(polygons: &[Polygon], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    if width == 0 || height == 0 {
        return mask;
    }
    for poly in polygons {
        fill_polygon(&mut mask, poly);
    }
    mask
}

fn fill_polygon(mask: &mut BinaryMask, poly: &Polygon) {
    let verts = poly.vertices();
    let n = verts.len();
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let y_min = verts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_max = verts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = ((y_min - ON_EDGE).ceil() as i64).max(0);
    let row_hi = ((y_max + ON_EDGE).floor() as i64).min(h - 1);

    let mark_span = |mask: &mut BinaryMask, y: i64, x_lo: f64, x_hi: f64| {
        let lo = ((x_lo - ON_EDGE).ceil() as i64).max(0);
        let hi = ((x_hi + ON_EDGE).floor() as i64).min(w - 1);
        for x in lo..=hi {
            mask.set(x as u32, y as u32, true);
        }
    };

    let mut crossings = Vec::with_capacity(n);
    for y in row_lo..=row_hi {
        let yf = y as f64;
        crossings.clear();
        for i in 0..n {
            let (a, b) = (verts[i], verts[(i + 1) % n]);
            // Interior: half-open edge rule keeps vertex crossings counted once.
            if (a.y <= yf && yf < b.y) || (b.y <= yf && yf < a.y) {
                crossings.push(a.x + (yf - a.y) * (b.x - a.x) / (b.y - a.y));
            }
            // Boundary: pixel centers lying on the edge itself.
            if (a.y - b.y).abs() <= ON_EDGE {
                if (a.y - yf).abs() <= ON_EDGE {
                    mark_span(mask, y, a.x.min(b.x), a.x.max(b.x));
                }
            } else if yf >= a.y.min(b.y) - ON_EDGE && yf <= a.y.max(b.y) + ON_EDGE {
                let x = a.x + (yf - a.y) * (b.x - a.x) / (b.y - a.y);
                let rx = x.round();
                if (x - rx).abs() <= ON_EDGE {
                    mark_span(mask, y, rx, rx);
                }
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            mark_span(mask, y, pair[0], pair[1]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{bbox_to_polygon, Point};
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, side: f64) -> Polygon {
        Polygon::from_pairs(&[[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]]).unwrap()
    }

    /// Independent oracle: test each pixel center with a winding-free
    /// crossing count plus an explicit on-segment check.
    fn brute_force(polys: &[Polygon], w: u32, h: u32) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let p = Point::new(x as f64, y as f64);
                if polys.iter().any(|poly| inside_or_on(poly, p)) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn inside_or_on(poly: &Polygon, p: Point) -> bool {
        let v = poly.vertices();
        let n = v.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            let within = p.x >= a.x.min(b.x) - 1e-9
                && p.x <= a.x.max(b.x) + 1e-9
                && p.y >= a.y.min(b.y) - 1e-9
                && p.y <= a.y.max(b.y) + 1e-9;
            if cross.abs() <= 1e-9 * (1.0 + a.distance(&b)) && within {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let xi = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    #[test]
    fn empty_list_gives_empty_mask() {
        assert_eq!(rasterize(&[], 10, 10).popcount(), 0);
    }

    #[test]
    fn full_frame() {
        let poly = bbox_to_polygon(&BBox::full(64, 48));
        assert_eq!(rasterize(&[poly], 64, 48).popcount(), 64 * 48);
    }

    #[test]
    fn ten_by_ten_region() {
        let poly = bbox_to_polygon(&BBox::new(30, 40, 39, 49).unwrap());
        let m = rasterize(&[poly], 100, 100);
        assert_eq!(m.popcount(), 100);
        // a geometric 10x10 square picks up one extra row and column of centers
        assert_eq!(rasterize(&[square(30.0, 40.0, 10.0)], 100, 100).popcount(), 121);
    }

    #[test]
    fn degenerate_box_is_one_pixel() {
        let poly = bbox_to_polygon(&BBox::new(3, 3, 3, 3).unwrap());
        let m = rasterize(&[poly], 10, 10);
        assert_eq!(m.popcount(), 1);
        assert!(m.get(3, 3));
    }

    #[test]
    fn clipped_at_borders() {
        let m = rasterize(&[square(-5.0, -5.0, 9.0)], 10, 10);
        assert_eq!(m.popcount(), 25);
    }

    #[test]
    fn diamond_matches_oracle() {
        let d = Polygon::from_pairs(&[[5.0, 0.0], [10.0, 5.0], [5.0, 10.0], [0.0, 5.0]]).unwrap();
        assert_eq!(rasterize(&[d.clone()], 12, 12), brute_force(&[d], 12, 12));
    }

    #[test]
    fn runs_round_trip() {
        let m = rasterize(&[square(2.0, 1.0, 3.0)], 8, 6);
        let back = BinaryMask::from_runs(8, 6, &m.to_runs()).unwrap();
        assert_eq!(back, m);
        assert!(BinaryMask::from_runs(8, 6, &[3]).is_err());
    }

    #[test]
    fn placement_offsets_and_clips() {
        let m = BinaryMask::filled(4, 3, true);
        let placed = m.placed(10, 10, 8, 8);
        assert_eq!(placed.popcount(), 4);
        assert!(placed.get(9, 9) && placed.get(8, 8));
    }

    fn arb_polygon() -> impl Strategy<Value = Polygon> {
        proptest::collection::vec((-5.0f64..45.0, -5.0f64..45.0), 3..8)
            .prop_map(|pts| Polygon::new(pts.into_iter().map(|(x, y)| Point::new(x, y)).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn matches_brute_force(poly in arb_polygon()) {
            let fast = rasterize(&[poly.clone()], 40, 40);
            let slow = brute_force(&[poly], 40, 40);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn adding_a_polygon_never_clears(a in arb_polygon(), b in arb_polygon()) {
            let one = rasterize(&[a.clone()], 40, 40);
            let two = rasterize(&[a, b], 40, 40);
            prop_assert!(one.is_subset_of(&two));
        }
    }
}
