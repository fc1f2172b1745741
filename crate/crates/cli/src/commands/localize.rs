use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use conekp::imaging::{from_crop_frame, Image};
use conekp::keypoints::ConeKeypoints;
use conekp::model::{load_checkpoint, KeypointModel};
use conekp::pipeline::detection_crop;
use conekp::stereo::{estimate_color, localize_cone, LocalizedCone};
use conekp::StereoRig;
use serde::{Deserialize, Serialize};

use crate::config::{self, parse_box};

#[derive(Args, Debug, Default, Serialize)]
pub struct LocalizeFlags {
    /// Stereo calibration (TOML); the default rig when omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// JSON file with `left` and `right` keypoint lists.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Left frame (PNG). Used for color, and for keypoints with a checkpoint.
    #[arg(long)]
    pub left: Option<PathBuf>,
    /// Right frame (PNG).
    #[arg(long)]
    pub right: Option<PathBuf>,
    /// Left detection box `x0,y0,x1,y1`.
    #[arg(long, value_parser = parse_box)]
    pub left_box: Option<[f64; 4]>,
    /// Right detection box `x0,y0,x1,y1`.
    #[arg(long, value_parser = parse_box)]
    pub right_box: Option<[f64; 4]>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for the config echo and result file.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub calibration: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
    pub left_box: Option<[f64; 4]>,
    pub right_box: Option<[f64; 4]>,
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct KeypointPair {
    left: ConeKeypoints,
    right: ConeKeypoints,
}

fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Image::from_png_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn model_keypoints(model: &KeypointModel, image: &Image, bbox: [f64; 4]) -> Result<ConeKeypoints> {
    let s = model.config.input_size;
    let (crop, w) = detection_crop(image, bbox, s);
    let p = model.predict(&crop)?;
    let mut out = [[0.0; 2]; conekp::NUM_KEYPOINTS];
    for (o, &k) in out.iter_mut().zip(&p.keypoints) {
        *o = from_crop_frame(k, w[0], w[1], w[2], w[2], s, s);
    }
    Ok(out)
}

pub fn run(cfg: &LocalizeConfig) -> Result<LocalizedCone> {
    let rig = match &cfg.calibration {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            StereoRig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => StereoRig::default(),
    };
    let left_img = cfg.left.as_deref().map(read_image).transpose()?;
    let (left, right) = match (&cfg.keypoints, &cfg.checkpoint) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let pair: KeypointPair = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            (pair.left, pair.right)
        }
        (None, Some(ck)) => {
            let (Some(li), Some(rp), Some(lb), Some(rb)) = (&left_img, &cfg.right, cfg.left_box, cfg.right_box) else {
                bail!("model localization needs --left, --right, --left-box and --right-box");
            };
            let model = KeypointModel::from_checkpoint(&load_checkpoint(ck)?)?;
            let ri = read_image(rp)?;
            (model_keypoints(&model, li, lb)?, model_keypoints(&model, &ri, rb)?)
        }
        (None, None) => bail!("localize needs --keypoints, or images with --checkpoint"),
    };
    let mut cone = localize_cone(&left, &right, &rig)?;
    if let Some(img) = &left_img {
        cone.color = estimate_color(img, &left);
    }
    let text = serde_json::to_string_pretty(&cone)?;
    println!("{text}");
    if let Some(out) = &cfg.out {
        config::echo(out, cfg)?;
        conekp::data::dataset::write_atomic(&out.join("localized.json"), text.as_bytes())?;
    }
    Ok(cone)
}
