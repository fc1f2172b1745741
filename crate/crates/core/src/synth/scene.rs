//! Stereo scene projection and rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cone::{
    add_gaussian_noise, ConeShape, CONE_BASE_HALF_WIDTH, CONE_HEIGHT, CONE_TOP_HALF_WIDTH, STRIPE_HIGH, STRIPE_LOW,
};
use crate::camera::StereoRig;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::keypoints::{ConeColor, ConeKeypoints, Point};

/// Height of the optical center above the ground plane, meters.
pub const CAMERA_HEIGHT: f64 = 0.6;

/// Height of the keypoint centroid above the cone base, meters.
pub fn keypoint_centroid_height() -> f64 {
    (2.0 * STRIPE_HIGH + 2.0 * STRIPE_LOW) / 6.0 * CONE_HEIGHT
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub left: Point,
    pub right: Point,
    pub disparity: f64,
}

/// Pinhole projection of a camera-frame point into both rectified views.
pub fn project_point(p: [f64; 3], rig: &StereoRig) -> Result<Projection> {
    let z = p[0];
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth { depth: z });
    }
    let i = &rig.intrinsics;
    let lx = i.cx - p[1] * i.fx / z;
    let ly = i.cy - p[2] * i.fy / z;
    let d = i.fx * rig.baseline / z;
    Ok(Projection {
        left: [lx, ly],
        right: [lx - d, ly],
        disparity: d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneCone {
    /// Keypoint centroid in the camera frame (x' forward, y' left, z' up).
    pub position: [f64; 3],
    pub color: ConeColor,
}

impl SceneCone {
    /// A cone standing on the ground at forward distance `x` and lateral
    /// offset `y`.
    pub fn on_ground(x: f64, y: f64, color: ConeColor) -> Self {
        Self {
            position: [x, y, -CAMERA_HEIGHT + keypoint_centroid_height()],
            color,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub cones: Vec<SceneCone>,
    pub lighting: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            cones: Vec::new(),
            lighting: 1.0,
            noise: 0.02,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedCone {
    /// Index into the scene spec.
    pub index: usize,
    pub color: ConeColor,
    pub position: [f64; 3],
    pub left_keypoints: ConeKeypoints,
    pub right_keypoints: ConeKeypoints,
    /// `[x_min, y_min, x_max, y_max]` of the silhouette.
    pub left_box: [f64; 4],
    pub right_box: [f64; 4],
    /// Some part of the silhouette falls outside at least one frame.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct StereoFrame {
    pub left: Image,
    pub right: Image,
    pub cones: Vec<RenderedCone>,
    /// Spec indices of cones that project outside both frames.
    pub omitted: Vec<usize>,
}

/// Silhouettes in the left and right frame. The cone is drawn as a
/// fronto-parallel billboard so the keypoint centroid projects exactly.
pub fn cone_shapes(cone: &SceneCone, rig: &StereoRig) -> Result<(ConeShape, ConeShape, f64)> {
    let [x, y, z] = cone.position;
    let base = [x, y, z - keypoint_centroid_height()];
    let p = project_point(base, rig)?;
    let f = rig.intrinsics.fy / x;
    let fx = rig.intrinsics.fx / x;
    let left = ConeShape::new(
        p.left,
        CONE_HEIGHT * f,
        CONE_BASE_HALF_WIDTH * fx,
        CONE_TOP_HALF_WIDTH * fx,
        0.0,
    );
    let right = left.translated(-p.disparity, 0.0);
    Ok((left, right, p.disparity))
}

fn inside(b: &[f64; 4], w: usize, h: usize) -> bool {
    b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= (w - 1) as f64 && b[3] <= (h - 1) as f64
}

fn overlaps(b: &[f64; 4], w: usize, h: usize) -> bool {
    b[2] >= 0.0 && b[3] >= 0.0 && b[0] <= (w - 1) as f64 && b[1] <= (h - 1) as f64
}

fn paint_background(img: &mut Image, rig: &StereoRig, lighting: f32) {
    let horizon = rig.intrinsics.cy;
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        let t = y as f32 / h as f32;
        let rgb = if (y as f64) < horizon {
            [0.62 + 0.2 * t, 0.72 + 0.15 * t, 0.88]
        } else {
            let g = 0.36 + 0.12 * t;
            [g, g * 1.02, g * 0.98]
        };
        for x in 0..w {
            img.set(x, y, rgb.map(|v| (v * lighting).clamp(0.0, 1.0)));
        }
    }
}

/// Renders both views, painting cones far to near.
pub fn render_stereo_scene(spec: &SceneSpec, rig: &StereoRig) -> Result<StereoFrame> {
    let (w, h) = (rig.width as usize, rig.height as usize);
    let lighting = spec.lighting as f32;
    let mut left = Image::new(w, h);
    let mut right = Image::new(w, h);
    paint_background(&mut left, rig, lighting);
    paint_background(&mut right, rig, lighting);

    let mut order: Vec<usize> = (0..spec.cones.len()).collect();
    order.sort_by(|&a, &b| spec.cones[b].position[0].total_cmp(&spec.cones[a].position[0]));

    let mut cones = Vec::new();
    let mut omitted = Vec::new();
    for idx in order {
        let cone = &spec.cones[idx];
        let (ls, rs, _) = cone_shapes(cone, rig)?;
        let (lb, rb) = (ls.bbox(), rs.bbox());
        if !overlaps(&lb, w, h) && !overlaps(&rb, w, h) {
            omitted.push(idx);
            continue;
        }
        ls.paint(&mut left, cone.color, lighting);
        rs.paint(&mut right, cone.color, lighting);
        cones.push(RenderedCone {
            index: idx,
            color: cone.color,
            position: cone.position,
            left_keypoints: ls.keypoints,
            right_keypoints: rs.keypoints,
            left_box: lb,
            right_box: rb,
            truncated: !inside(&lb, w, h) || !inside(&rb, w, h),
        });
    }
    cones.sort_by_key(|c| c.index);
    omitted.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    add_gaussian_noise(&mut left, spec.noise, &mut rng);
    add_gaussian_noise(&mut right, spec.noise, &mut rng);
    Ok(StereoFrame {
        left,
        right,
        cones,
        omitted,
    })
}

/// Sampling ranges for [`random_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub cones: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub noise: f64,
    pub lighting: (f64, f64),
    /// Probability weights for blue, yellow and orange.
    pub color_weights: [f64; 3],
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            cones: 8,
            min_distance: 3.0,
            max_distance: 19.5,
            noise: 0.02,
            lighting: (0.85, 1.15),
            color_weights: [0.5, 0.5, 0.0],
        }
    }
}

/// Samples a scene whose cones are fully visible in both frames and whose
/// left-frame boxes do not overlap.
pub fn random_scene(seed: u64, sampler: &SceneSampler, rig: &StereoRig) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rig.width as usize, rig.height as usize);
    let total: f64 = sampler.color_weights.iter().sum();
    let mut cones: Vec<SceneCone> = Vec::new();
    let mut boxes: Vec<[f64; 4]> = Vec::new();
    let mut attempts = 0;
    while cones.len() < sampler.cones && attempts < sampler.cones * 200 {
        attempts += 1;
        let x = rng.random_range(sampler.min_distance..sampler.max_distance);
        let half_fov = (rig.intrinsics.cx - 8.0) / rig.intrinsics.fx * x;
        let y = rng.random_range(-half_fov..half_fov);
        let mut pick = rng.random::<f64>() * total;
        let mut color = ConeColor::Blue;
        for (c, wgt) in [ConeColor::Blue, ConeColor::Yellow, ConeColor::Orange]
            .into_iter()
            .zip(sampler.color_weights)
        {
            color = c;
            if pick < wgt {
                break;
            }
            pick -= wgt;
        }
        let cone = SceneCone::on_ground(x, y, color);
        let (ls, rs, _) = cone_shapes(&cone, rig)?;
        let (lb, rb) = (ls.bbox(), rs.bbox());
        if !inside(&lb, w, h) || !inside(&rb, w, h) {
            continue;
        }
        let pad = 2.0;
        let clash = boxes
            .iter()
            .any(|b| lb[0] - pad < b[2] && b[0] < lb[2] + pad && lb[1] - pad < b[3] && b[1] < lb[3] + pad);
        if clash {
            continue;
        }
        boxes.push(lb);
        cones.push(cone);
    }
    let lighting = if sampler.lighting.1 > sampler.lighting.0 {
        rng.random_range(sampler.lighting.0..sampler.lighting.1)
    } else {
        sampler.lighting.0
    };
    Ok(SceneSpec {
        cones,
        lighting,
        noise: sampler.noise,
        seed: rng.random(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let rig = StereoRig::default();
        let p = project_point([10.0, 0.0, 0.0], &rig).unwrap();
        assert_eq!(p.left, [320.0, 180.0]);
        assert_eq!(p.disparity, 6.0);
        assert_eq!(p.right, [314.0, 180.0]);
    }

    #[test]
    fn unit_disparity_at_f_times_t() {
        let rig = StereoRig::default();
        let z = rig.intrinsics.fx * rig.baseline;
        assert_eq!(project_point([z, 0.3, -0.2], &rig).unwrap().disparity, 1.0);
    }

    #[test]
    fn non_positive_depth_is_rejected() {
        let rig = StereoRig::default();
        assert!(project_point([0.0, 0.0, 0.0], &rig).is_err());
        assert!(project_point([-1.0, 0.0, 0.0], &rig).is_err());
    }

    #[test]
    fn empty_scene_renders_nothing() {
        let f = render_stereo_scene(&SceneSpec::default(), &StereoRig::default()).unwrap();
        assert!(f.cones.is_empty() && f.omitted.is_empty());
    }

    #[test]
    fn cone_behind_frame_is_omitted() {
        let spec = SceneSpec {
            cones: vec![SceneCone::on_ground(5.0, 40.0, ConeColor::Blue)],
            ..SceneSpec::default()
        };
        let f = render_stereo_scene(&spec, &StereoRig::default()).unwrap();
        assert_eq!(f.omitted, vec![0]);
    }
}
