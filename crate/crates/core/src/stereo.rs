//! Keypoint-mean disparity, depth, back-projection and color estimation.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, StereoRig};
use crate::error::{Error, Result};
use crate::imaging::{rgb_to_hsv, Image};
use crate::keypoints::{mean_point, ConeColor, ConeKeypoints, Point};
use crate::synth::raster::signed_area2;

/// Vertical disagreement (px) above which a localization is flagged.
pub const LOW_QUALITY_DY: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizedCone {
    /// `(x', y', z')` in meters: forward, left, up.
    pub position: [f64; 3],
    pub color: ConeColor,
    pub left_keypoints: ConeKeypoints,
    pub right_keypoints: ConeKeypoints,
    pub disparity: f64,
    pub depth: f64,
    pub low_quality: bool,
}

pub fn mean_disparity(left: &ConeKeypoints, right: &ConeKeypoints) -> Result<f64> {
    let d = mean_point(left)[0] - mean_point(right)[0];
    if !(d > 0.0) {
        return Err(Error::NonPositiveDisparity { disparity: d });
    }
    Ok(d)
}

pub fn depth(f: f64, baseline: f64, disparity: f64) -> Result<f64> {
    if !(disparity > 0.0) {
        return Err(Error::NonPositiveDisparity { disparity });
    }
    if !(f > 0.0 && baseline > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "focal length and baseline must be positive (f={f}, T={baseline})"
        )));
    }
    Ok(f * baseline / disparity)
}

pub fn backproject(x: f64, y: f64, z: f64, k: &CameraIntrinsics) -> [f64; 3] {
    [z, -(x - k.cx) * z / k.fx, -(y - k.cy) * z / k.fy]
}

/// Localizes from keypoints alone; the color is left as unknown.
pub fn localize_cone(left: &ConeKeypoints, right: &ConeKeypoints, rig: &StereoRig) -> Result<LocalizedCone> {
    let d = mean_disparity(left, right)?;
    let z = depth(rig.intrinsics.fx, rig.baseline, d)?;
    let [mx, my] = mean_point(left);
    let dy = (my - mean_point(right)[1]).abs();
    Ok(LocalizedCone {
        position: backproject(mx, my, z, &rig.intrinsics),
        color: ConeColor::Unknown,
        left_keypoints: *left,
        right_keypoints: *right,
        disparity: d,
        depth: z,
        low_quality: dy > LOW_QUALITY_DY,
    })
}

/// Mean color over a grid inside the quad `(a, b, c, d)`, where `a-b` is one
/// edge and `c-d` the opposite edge in the same left-to-right order.
/// Only the central part `u, v in [0.2, 0.8]` is used so that edge blur and
/// small keypoint errors do not leak neighboring colors in.
fn quad_mean(img: &Image, a: Point, b: Point, c: Point, d: Point) -> [f32; 3] {
    const N: usize = 7;
    let mut acc = [0.0f64; 3];
    for i in 0..N {
        let v = 0.2 + 0.6 * i as f64 / (N - 1) as f64;
        for j in 0..N {
            let u = 0.2 + 0.6 * j as f64 / (N - 1) as f64;
            let top = [a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u];
            let bot = [c[0] + (d[0] - c[0]) * u, c[1] + (d[1] - c[1]) * u];
            let p = [top[0] + (bot[0] - top[0]) * v, top[1] + (bot[1] - top[1]) * v];
            let s = img.sample(p[0], p[1]);
            for k in 0..3 {
                acc[k] += s[k] as f64;
            }
        }
    }
    acc.map(|v| (v / (N * N) as f64) as f32)
}

/// HSV summaries of the stripe band and the body below it.
pub fn stripe_and_body_hsv(img: &Image, kps: &ConeKeypoints) -> Option<([f64; 3], [f64; 3])> {
    let stripe = [kps[2], kps[3], kps[1], kps[0]];
    let body = [kps[4], kps[5], kps[3], kps[2]];
    if signed_area2(&stripe).abs() < 1e-6 || signed_area2(&body).abs() < 1e-6 {
        return None;
    }
    let s = quad_mean(img, kps[0], kps[1], kps[2], kps[3]);
    let b = quad_mean(img, kps[2], kps[3], kps[4], kps[5]);
    Some((rgb_to_hsv(s), rgb_to_hsv(b)))
}

/// Classifies by body hue plus stripe contrast: a blue body with a brighter,
/// paler stripe is blue; a yellow body with a darker stripe is yellow.
pub fn estimate_color(img: &Image, kps: &ConeKeypoints) -> ConeColor {
    let Some(([_, s_sat, s_val], [b_hue, b_sat, b_val])) = stripe_and_body_hsv(img, kps) else {
        return ConeColor::Unknown;
    };
    if b_sat < 0.35 {
        return ConeColor::Unknown;
    }
    if (190.0..=260.0).contains(&b_hue) && s_val > b_val && s_sat < b_sat {
        return ConeColor::Blue;
    }
    if (35.0..=75.0).contains(&b_hue) && s_val < b_val - 0.15 {
        return ConeColor::Yellow;
    }
    ConeColor::Unknown
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted(k: &ConeKeypoints, dx: f64) -> ConeKeypoints {
        k.map(|p| [p[0] + dx, p[1]])
    }

    const KPS: ConeKeypoints = [
        [30.0, 30.0],
        [50.0, 30.0],
        [28.0, 40.0],
        [52.0, 40.0],
        [20.0, 70.0],
        [60.0, 70.0],
    ];

    #[test]
    fn disparity_of_shifted_keypoints() {
        assert_eq!(mean_disparity(&KPS, &shifted(&KPS, -6.0)).unwrap(), 6.0);
        assert!(matches!(
            mean_disparity(&KPS, &KPS),
            Err(Error::NonPositiveDisparity { .. })
        ));
    }

    #[test]
    fn depth_substitution() {
        assert_eq!(depth(500.0, 0.12, 6.0).unwrap(), 10.0);
        assert_eq!(depth(500.0, 0.12, 12.0).unwrap(), 5.0);
        assert!(depth(500.0, 0.12, 0.0).is_err());
        assert!(depth(500.0, 0.12, -1.0).is_err());
    }

    #[test]
    fn backprojection_cases() {
        let k = StereoRig::default().intrinsics;
        assert_eq!(backproject(k.cx, k.cy, 7.0, &k), [7.0, 0.0, 0.0]);
        assert_eq!(backproject(k.cx + 50.0, k.cy, 10.0, &k)[1], -1.0);
    }

    #[test]
    fn swapped_frames_fail() {
        let rig = StereoRig::default();
        let right = shifted(&KPS, -6.0);
        assert!(localize_cone(&right, &KPS, &rig).is_err());
        let c = localize_cone(&KPS, &right, &rig).unwrap();
        assert_eq!(c.position[0], c.depth);
        assert!(!c.low_quality);
    }

    #[test]
    fn vertical_disagreement_is_flagged() {
        let rig = StereoRig::default();
        let right = KPS.map(|p| [p[0] - 6.0, p[1] + 4.0]);
        assert!(localize_cone(&KPS, &right, &rig).unwrap().low_quality);
    }

    #[test]
    fn gray_image_is_unknown() {
        let img = Image::filled(80, 80, [0.5; 3]);
        assert_eq!(estimate_color(&img, &KPS), ConeColor::Unknown);
    }

    #[test]
    fn degenerate_quad_is_unknown() {
        let img = Image::filled(80, 80, [0.1, 0.2, 0.9]);
        assert_eq!(estimate_color(&img, &[[10.0, 10.0]; 6]), ConeColor::Unknown);
    }
}
