//! Synthetic cone crops and stereo scenes with exact ground truth.

pub mod cone;
pub mod raster;
pub mod scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use cone::{render_cone_crop, ConeCrop, ConeShape, CropStyle};
pub use scene::{
    project_point, random_scene, render_stereo_scene, Projection, RenderedCone, SceneCone, SceneSampler, SceneSpec,
    StereoFrame,
};

use crate::keypoints::ConeColor;

/// Per-item seed derived from a run seed, stable across counts.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

/// Color for crop `index`: blue and yellow in equal shares with a small
/// orange fraction.
pub fn crop_color(seed: u64) -> ConeColor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6c6f_72);
    match rng.random_range(0..20) {
        0 => ConeColor::Orange,
        n if n % 2 == 1 => ConeColor::Blue,
        _ => ConeColor::Yellow,
    }
}

/// Generates `count` crops deterministically from `seed`.
pub fn generate_crops(count: usize, seed: u64, style: &CropStyle) -> Vec<ConeCrop> {
    (0..count as u64)
        .map(|i| {
            let s = item_seed(seed, i);
            render_cone_crop(s, crop_color(s), style)
        })
        .collect()
}
