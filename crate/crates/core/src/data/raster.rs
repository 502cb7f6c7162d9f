//! Polygon rasterization: pixel `(r, c)` is set iff its centre
//! `(c + 0.5, r + 0.5)` lies inside under the even-odd rule.

use crate::mask::Mask;

/// Twice the signed shoelace area.
fn doubled_area(poly: &[f64]) -> f64 {
    let n = poly.len() / 2;
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            poly[2 * i] * poly[2 * j + 1] - poly[2 * j] * poly[2 * i + 1]
        })
        .sum()
}

/// Rasterizes one flat `[x0, y0, ...]` polygon. A zero-area polygon yields an
/// empty mask and a warning; the return flag reports that case.
pub fn rasterize_polygon(poly: &[f64], height: usize, width: usize) -> (Mask, bool) {
    let mut mask = Mask::zeros(height, width);
    let n = poly.len() / 2;
    if n < 3 || doubled_area(poly) == 0.0 {
        log::warn!("degenerate polygon with {n} vertices rasterized as empty");
        return (mask, true);
    }
    let mut xs = Vec::with_capacity(n);
    for r in 0..height {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let j = (i + n - 1) % n;
            let (xi, yi, xj, yj) = (poly[2 * i], poly[2 * i + 1], poly[2 * j], poly[2 * j + 1]);
            if (yi > y) != (yj > y) {
                xs.push((xj - xi) * (y - yi) / (yj - yi) + xi);
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        // a centre is inside iff an odd number of crossings lie strictly right of it
        for c in 0..width {
            let x = c as f64 + 0.5;
            let right = xs.len() - xs.partition_point(|&v| v <= x);
            if right % 2 == 1 {
                mask.set(r, c, true);
            }
        }
    }
    (mask, false)
}

/// OR-combination of several polygons.
pub fn rasterize_polygons<'a>(polys: impl IntoIterator<Item = &'a [f64]>, height: usize, width: usize) -> Mask {
    let mut mask = Mask::zeros(height, width);
    for p in polys {
        let (m, _) = rasterize_polygon(p, height, width);
        mask.union_with(&m).expect("same extent");
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_has_fifty_pixels() {
        let (m, degenerate) = rasterize_polygon(&[10.0, 10.0, 20.0, 10.0, 20.0, 15.0, 10.0, 15.0], 32, 32);
        assert!(!degenerate);
        assert_eq!(m.count_ones(), 50);
        assert_eq!(m.get(10, 10), 1);
        assert_eq!(m.get(14, 19), 1);
        assert_eq!(m.get(15, 19), 0);
        assert_eq!(m.get(14, 20), 0);
    }

    #[test]
    fn collinear_polygon_is_empty() {
        let (m, degenerate) = rasterize_polygon(&[1.0, 1.0, 5.0, 5.0, 9.0, 9.0], 16, 16);
        assert!(degenerate);
        assert_eq!(m.count_ones(), 0);
    }
}
