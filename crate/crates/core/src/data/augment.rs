//! Rotation and boundary-crop augmentation.
//!
//! Rotations never mirror, so every keypoint keeps its index: index 0 is
//! still the stripe corner on the cone's own left after rotating.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::keypoints::ConeKeypoints;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    None,
    Rotate90,
    Rotate180,
    Rotate270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [
        Rotation::None,
        Rotation::Rotate90,
        Rotation::Rotate180,
        Rotation::Rotate270,
    ];

    pub fn quarter_turns(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Rotation::None => "none",
            Rotation::Rotate90 => "rot90",
            Rotation::Rotate180 => "rot180",
            Rotation::Rotate270 => "rot270",
        }
    }

    pub fn then(self, other: Rotation) -> Rotation {
        Rotation::ALL[(self.quarter_turns() + other.quarter_turns()) % 4]
    }

    /// Maps a point in a `w x h` image.
    pub fn map_point(self, [x, y]: [f64; 2], w: usize, h: usize) -> [f64; 2] {
        let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
        match self {
            Rotation::None => [x, y],
            Rotation::Rotate90 => [y, wm - x],
            Rotation::Rotate180 => [wm - x, hm - y],
            Rotation::Rotate270 => [hm - y, x],
        }
    }
}

pub fn rotate_augment(img: &Image, kps: &ConeKeypoints, rot: Rotation) -> Result<(Image, ConeKeypoints)> {
    let (w, h) = (img.width(), img.height());
    if matches!(rot, Rotation::Rotate90 | Rotation::Rotate270) && w != h {
        return Err(Error::InvalidArgument(format!(
            "quarter-turn rotation needs a square image, got {w}x{h}"
        )));
    }
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let [nx, ny] = rot.map_point([x as f64, y as f64], w, h);
            out.set(nx as usize, ny as usize, img.get(x, y));
        }
    }
    Ok((out, kps.map(|p| rot.map_point(p, w, h))))
}

/// Margin (px) every keypoint keeps from the crop border.
pub const CROP_KEEP_MARGIN: f64 = 1.0;
/// Largest crop per side, px.
pub const CROP_MAX_MARGIN: f64 = 8.0;

#[derive(Clone, Debug)]
pub struct BoundaryCrop {
    pub image: Image,
    pub keypoints: ConeKeypoints,
    /// Left, top, right, bottom, in source pixels.
    pub margins: [f64; 4],
    /// False when no valid crop existed and the input was returned as is.
    pub applied: bool,
}

/// Largest admissible margin per side: `[left, top, right, bottom]`.
pub fn crop_slack(kps: &ConeKeypoints, w: usize, h: usize) -> [f64; 4] {
    let min_x = kps.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = kps.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = kps.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = kps.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    [
        min_x - CROP_KEEP_MARGIN,
        min_y - CROP_KEEP_MARGIN,
        (w - 1) as f64 - max_x - CROP_KEEP_MARGIN,
        (h - 1) as f64 - max_y - CROP_KEEP_MARGIN,
    ]
}

/// Applies explicit margins and rescales back to the input size.
pub fn apply_crop(img: &Image, kps: &ConeKeypoints, margins: [f64; 4]) -> (Image, ConeKeypoints) {
    let (w, h) = (img.width(), img.height());
    let [l, t, r, b] = margins;
    let (cw, ch) = (w as f64 - l - r, h as f64 - t - b);
    let out = img.crop_resize(l, t, cw, ch, w, h);
    let kps = kps.map(|p| [(p[0] - l) * w as f64 / cw, (p[1] - t) * h as f64 / ch]);
    (out, kps)
}

pub fn random_boundary_crop(img: &Image, kps: &ConeKeypoints, seed: u64) -> BoundaryCrop {
    let slack = crop_slack(kps, img.width(), img.height());
    if slack.iter().any(|&s| s < 0.0) {
        return BoundaryCrop {
            image: img.clone(),
            keypoints: *kps,
            margins: [0.0; 4],
            applied: false,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margins = slack.map(|s| rng.random::<f64>() * s.min(CROP_MAX_MARGIN));
    let (image, keypoints) = apply_crop(img, kps, margins);
    BoundaryCrop {
        image,
        keypoints,
        margins,
        applied: true,
    }
}
