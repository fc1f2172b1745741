//! Anti-aliased flat-shaded polygon filling.

use crate::imaging::Image;
use crate::keypoints::Point;

const SUB: usize = 4;

/// Twice the signed area; positive for counter-clockwise in a y-down frame
/// viewed as a standard y-up plot.
pub fn signed_area2(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum()
}

/// Point-in-convex-polygon test, either winding.
pub fn contains_convex(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut sign = 0i8;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let s = if cross > 0.0 {
            1
        } else if cross < 0.0 {
            -1
        } else {
            continue;
        };
        if sign == 0 {
            sign = s;
        } else if s != sign {
            return false;
        }
    }
    true
}

/// Paints a convex polygon with coverage from `4 x 4` supersampling per pixel.
/// Pixel `(i, j)` covers the square `[i - 0.5, i + 0.5] x [j - 0.5, j + 0.5]`.
pub fn fill_convex(img: &mut Image, poly: &[Point], rgb: [f32; 3]) {
    if poly.len() < 3 || signed_area2(poly).abs() < 1e-12 {
        return;
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    let min_x = poly.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = poly.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let x0 = ((min_x - 0.5).floor() as isize).max(0);
    let x1 = ((max_x + 0.5).ceil() as isize).min(w - 1);
    let y0 = ((min_y - 0.5).floor() as isize).max(0);
    let y1 = ((max_y + 0.5).ceil() as isize).min(h - 1);
    let step = 1.0 / SUB as f64;
    for j in y0..=y1 {
        for i in x0..=x1 {
            let mut hits = 0usize;
            for b in 0..SUB {
                let sy = j as f64 - 0.5 + (b as f64 + 0.5) * step;
                for a in 0..SUB {
                    let sx = i as f64 - 0.5 + (a as f64 + 0.5) * step;
                    if contains_convex(poly, [sx, sy]) {
                        hits += 1;
                    }
                }
            }
            if hits == 0 {
                continue;
            }
            let c = hits as f32 / (SUB * SUB) as f32;
            let (iu, ju) = (i as usize, j as usize);
            let old = img.get(iu, ju);
            img.set(iu, ju, [0, 1, 2].map(|k| old[k] * (1.0 - c) + rgb[k] * c));
        }
    }
}
