//! Cone geometry, palette and the single-crop generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster::fill_convex;
use crate::imaging::Image;
use crate::keypoints::{ConeColor, ConeKeypoints, Point};

/// Small track cone, meters.
pub const CONE_HEIGHT: f64 = 0.325;
pub const CONE_BASE_HALF_WIDTH: f64 = 0.114;
pub const CONE_TOP_HALF_WIDTH: f64 = 0.025;
/// Stripe band, as fractions of the height above the base.
pub const STRIPE_LOW: f64 = 0.40;
pub const STRIPE_HIGH: f64 = 0.62;

pub fn body_rgb(color: ConeColor) -> [f32; 3] {
    let c = match color {
        ConeColor::Blue => [20, 60, 190],
        ConeColor::Yellow => [245, 205, 20],
        ConeColor::Orange => [250, 110, 10],
        ConeColor::Unknown => [128, 128, 128],
    };
    c.map(|v| v as f32 / 255.0)
}

pub fn stripe_rgb(color: ConeColor) -> [f32; 3] {
    let c = match color {
        ConeColor::Yellow => [25, 25, 25],
        ConeColor::Unknown => [128, 128, 128],
        _ => [240, 240, 240],
    };
    c.map(|v| v as f32 / 255.0)
}

/// A cone silhouette in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeShape {
    /// Base-left, base-right, top-right, top-left.
    pub body: [Point; 4],
    pub keypoints: ConeKeypoints,
}

impl ConeShape {
    /// Builds the silhouette from a base-center point, pixel height, half
    /// widths (base, top) and roll in radians (positive = counter-clockwise
    /// as seen on screen).
    pub fn new(base: Point, height: f64, base_hw: f64, top_hw: f64, roll: f64) -> Self {
        let (s, c) = roll.sin_cos();
        // Local frame: u to the right, v upwards; screen y points down.
        let to_img = |u: f64, v: f64| -> Point { [base[0] + u * c - v * s, base[1] - (u * s + v * c)] };
        let hw = |f: f64| base_hw + (top_hw - base_hw) * f;
        let body = [
            to_img(-base_hw, 0.0),
            to_img(base_hw, 0.0),
            to_img(top_hw, height),
            to_img(-top_hw, height),
        ];
        let (hi, lo) = (STRIPE_HIGH * height, STRIPE_LOW * height);
        let keypoints = [
            to_img(-hw(STRIPE_HIGH), hi),
            to_img(hw(STRIPE_HIGH), hi),
            to_img(-hw(STRIPE_LOW), lo),
            to_img(hw(STRIPE_LOW), lo),
            body[0],
            body[1],
        ];
        Self { body, keypoints }
    }

    /// Stripe quad in winding order.
    pub fn stripe(&self) -> [Point; 4] {
        let k = &self.keypoints;
        [k[2], k[3], k[1], k[0]]
    }

    /// Axis-aligned box `[x_min, y_min, x_max, y_max]` of the silhouette.
    pub fn bbox(&self) -> [f64; 4] {
        let xs = self.body.iter().map(|p| p[0]);
        let ys = self.body.iter().map(|p| p[1]);
        [
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        ]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mv = |p: Point| [p[0] + dx, p[1] + dy];
        Self {
            body: self.body.map(mv),
            keypoints: self.keypoints.map(mv),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let sc = |p: Point| [p[0] * k, p[1] * k];
        Self {
            body: self.body.map(sc),
            keypoints: self.keypoints.map(sc),
        }
    }

    pub fn paint(&self, img: &mut Image, color: ConeColor, lighting: f32) {
        let lit = |rgb: [f32; 3]| rgb.map(|v| (v * lighting).min(1.0));
        fill_convex(img, &self.body, lit(body_rgb(color)));
        fill_convex(img, &self.stripe(), lit(stripe_rgb(color)));
    }
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(img: &mut Image, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in img.data_mut() {
        *v += normal.sample(rng) as f32;
    }
    img.clamp01();
}

/// Randomization ranges for [`render_cone_crop`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropStyle {
    pub size: usize,
    /// Silhouette height as a fraction of the crop.
    pub height_frac: (f64, f64),
    /// Silhouette center offset from the crop center, fraction of the crop.
    pub center_jitter: f64,
    pub max_roll_deg: f64,
    /// Relative jitter of the width-to-height ratio.
    pub aspect_jitter: f64,
    pub lighting: (f64, f64),
    pub noise_sigma: (f64, f64),
    /// Probability of rendering at a reduced resolution then upsampling.
    pub lowres_prob: f64,
    /// Source resolution range (pixels) for the reduced-resolution path.
    pub lowres_size: (usize, usize),
}

impl Default for CropStyle {
    fn default() -> Self {
        Self {
            size: 80,
            height_frac: (0.45, 0.85),
            center_jitter: 0.06,
            max_roll_deg: 10.0,
            aspect_jitter: 0.12,
            lighting: (0.7, 1.2),
            noise_sigma: (0.0, 0.03),
            lowres_prob: 0.5,
            lowres_size: (14, 60),
        }
    }
}

impl CropStyle {
    /// No randomization beyond placement; used by oracle tests.
    pub fn clean() -> Self {
        Self {
            noise_sigma: (0.0, 0.0),
            lighting: (1.0, 1.0),
            lowres_prob: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConeCrop {
    pub image: Image,
    pub keypoints: ConeKeypoints,
    pub color: ConeColor,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn background<R: Rng + ?Sized>(img: &mut Image, lighting: f32, rng: &mut R) {
    let (w, h) = (img.width(), img.height());
    let horizon = rng.random_range(0.25..0.75) * h as f64;
    let sky = [
        0.55 + rng.random::<f32>() * 0.3,
        0.6 + rng.random::<f32>() * 0.3,
        0.7 + rng.random::<f32>() * 0.25,
    ];
    let g = 0.25 + rng.random::<f32>() * 0.35;
    let tint = rng.random::<f32>() * 0.15;
    let ground = [g, g + tint, g * (1.0 - tint)];
    let slope = (rng.random::<f32>() - 0.5) * 0.3;
    for y in 0..h {
        let t = y as f32 / h as f32;
        let base = if (y as f64) < horizon { sky } else { ground };
        for x in 0..w {
            let shade = 1.0 + slope * (t - 0.5) + 0.05 * ((x as f32) / w as f32 - 0.5);
            img.set(x, y, base.map(|v| (v * shade * lighting).clamp(0.0, 1.0)));
        }
    }
}

/// Renders one cone crop with exact keypoints. Keypoints keep at least a
/// 2 px margin from every border.
pub fn render_cone_crop(seed: u64, color: ConeColor, style: &CropStyle) -> ConeCrop {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = style.size;
    let lowres = rng.random::<f64>() < style.lowres_prob;
    let src = if lowres {
        rng.random_range(style.lowres_size.0..=style.lowres_size.1.max(style.lowres_size.0))
            .min(out)
    } else {
        out
    };
    let scale = out as f64 / src as f64;
    let lighting = uniform(&mut rng, style.lighting) as f32;
    let noise = uniform(&mut rng, style.noise_sigma);

    // Placement is sampled in output coordinates and retried until every
    // keypoint clears the margin.
    let margin = 2.0;
    let shape_out = loop {
        let height = uniform(&mut rng, style.height_frac) * out as f64;
        let aspect = 1.0 + rng.random_range(-1.0..=1.0) * style.aspect_jitter;
        let base_hw = height * CONE_BASE_HALF_WIDTH / CONE_HEIGHT * aspect;
        let top_hw = height * CONE_TOP_HALF_WIDTH / CONE_HEIGHT * aspect;
        let roll = rng.random_range(-1.0..=1.0) * style.max_roll_deg.to_radians();
        let shape = ConeShape::new([0.0, 0.0], height, base_hw, top_hw, roll);
        let b = shape.bbox();
        let center = (out as f64 - 1.0) / 2.0;
        let jx = rng.random_range(-1.0..=1.0) * style.center_jitter * out as f64;
        let jy = rng.random_range(-1.0..=1.0) * style.center_jitter * out as f64;
        let shape = shape.translated(center + jx - (b[0] + b[2]) / 2.0, center + jy - (b[1] + b[3]) / 2.0);
        let limit = out as f64 - 1.0 - margin;
        if shape
            .keypoints
            .iter()
            .all(|p| p[0] >= margin && p[0] <= limit && p[1] >= margin && p[1] <= limit)
        {
            break shape;
        }
    };

    let mut img = Image::new(src, src);
    background(&mut img, lighting, &mut rng);
    let shape_src = shape_out.scaled(1.0 / scale);
    shape_src.paint(&mut img, color, lighting);
    add_gaussian_noise(&mut img, noise, &mut rng);
    let image = if lowres { img.resize(out, out) } else { img };
    ConeCrop {
        image,
        keypoints: shape_src.keypoints.map(|p| [p[0] * scale, p[1] * scale]),
        color,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoint_order_follows_convention() {
        let s = ConeShape::new([40.0, 70.0], 60.0, 21.0, 4.6, 0.0);
        let k = s.keypoints;
        assert!(k[0][0] < k[1][0] && k[2][0] < k[3][0] && k[4][0] < k[5][0]);
        assert!(k[0][1] < k[2][1] && k[2][1] < k[4][1]);
        assert_eq!(k[4], [19.0, 70.0]);
    }

    #[test]
    fn roll_keeps_left_right_order_within_limits() {
        for deg in [-10.0f64, 10.0] {
            let s = ConeShape::new([40.0, 70.0], 60.0, 21.0, 4.6, deg.to_radians());
            assert!(s.keypoints[0][0] < s.keypoints[1][0]);
            assert!(s.keypoints[4][0] < s.keypoints[5][0]);
        }
    }

    #[test]
    fn crop_is_deterministic_and_in_bounds() {
        let style = CropStyle::default();
        for seed in 0..50 {
            let a = render_cone_crop(seed, ConeColor::Blue, &style);
            let b = render_cone_crop(seed, ConeColor::Blue, &style);
            assert_eq!(a.image, b.image);
            assert_eq!(a.keypoints, b.keypoints);
            for p in a.keypoints {
                assert!(p[0] >= 2.0 && p[0] <= 77.0 && p[1] >= 2.0 && p[1] <= 77.0, "{p:?}");
            }
        }
    }
}
