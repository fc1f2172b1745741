//! On-disk dataset layout and conversion to training samples.
//!
//! ```text
//! <dir>/images/<id>.png
//! <dir>/annotations/<id>.json
//! <dir>/manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use conekp_tensor::Tensor;
use sha2::{Digest, Sha256};

use super::annotation::{parse_annotation, parse_unvalidated, ConeAnnotation, DropTally, ImageBounds, KeypointRemap};
use super::split::{split_dataset, DatasetItem, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::keypoints::{ConeColor, ConeKeypoints};
use crate::loss::heatmap_target;
use crate::synth::ConeCrop;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Content address: first 16 hex digits of the SHA-256 of the image bytes.
pub fn image_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A decoded, validated sample at model resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub keypoints: ConeKeypoints,
    pub color: ConeColor,
}

pub struct TrainingSample {
    pub input: Tensor<f32>,
    pub keypoints: ConeKeypoints,
    pub heatmaps: Tensor<f32>,
}

/// Decodes and resizes to `size x size`, scaling keypoints by the same map.
pub fn decode_sample(ann: &ConeAnnotation, bytes: &[u8], size: usize) -> Result<Sample> {
    let img = Image::from_png_bytes(bytes)?;
    let bounds = ImageBounds {
        width: img.width() as u32,
        height: img.height() as u32,
    };
    ann.validate(bounds)?;
    let kps = ann
        .keypoint_array()
        .ok_or_else(|| Error::InvalidArgument(format!("annotation {} is rejected", ann.image_id)))?;
    let (sx, sy) = (size as f64 / img.width() as f64, size as f64 / img.height() as f64);
    let image = if img.width() == size && img.height() == size {
        img
    } else {
        img.resize(size, size)
    };
    Ok(Sample {
        id: ann.image_id.clone(),
        image,
        keypoints: kps.map(|p| [p[0] * sx, p[1] * sy]),
        color: ann.color,
    })
}

pub fn to_training_sample(ann: &ConeAnnotation, bytes: &[u8], size: usize, sigma: f64) -> Result<TrainingSample> {
    let s = decode_sample(ann, bytes, size)?;
    Ok(TrainingSample {
        input: s.image.to_tensor(),
        heatmaps: heatmap_target(&s.keypoints, size, size, sigma)?,
        keypoints: s.keypoints,
    })
}

/// Writes crops as PNG + annotation pairs and a split manifest.
pub fn write_crop_dataset(dir: &Path, crops: &[ConeCrop], split_seed: u64) -> Result<DatasetManifest> {
    let mut items = Vec::with_capacity(crops.len());
    for crop in crops {
        let png = crop.image.to_png_bytes();
        let id = image_id(&png);
        let item = DatasetItem::original(&id);
        if items.iter().any(|i: &DatasetItem| i.id == id) {
            continue;
        }
        write_atomic(&dir.join(&item.image), &png)?;
        let ann = ConeAnnotation::new(&id, crop.keypoints, crop.color);
        write_atomic(&dir.join(&item.annotation), ann.to_json().as_bytes())?;
        items.push(item);
    }
    let manifest = split_dataset(&items, split_seed)?;
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_item(dir: &Path, item: &DatasetItem, size: usize) -> Result<Sample> {
    let ann_path = dir.join(&item.annotation);
    let img_path = dir.join(&item.image);
    let doc = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
    let ann = parse_unvalidated(&doc)?;
    decode_sample(&ann, &bytes, size)
}

pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split, size: usize) -> Result<Vec<Sample>> {
    manifest.ids(split).map(|item| load_item(dir, item, size)).collect()
}

/// Reads every `*.json` under `annotations/`, validating against the paired
/// image's size, applying `remap`, and dropping invalid or rejected entries.
pub fn ingest_dir(dir: &Path, remap: KeypointRemap) -> Result<(Vec<ConeAnnotation>, DropTally)> {
    let ann_dir = dir.join("annotations");
    let mut paths: Vec<PathBuf> = fs::read_dir(&ann_dir)
        .map_err(|e| Error::io(&ann_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut tally = DropTally::default();
    let mut kept = Vec::new();
    for path in paths {
        let doc = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut ann = match parse_unvalidated(&doc) {
            Ok(a) => a,
            Err(_) => {
                tally.malformed += 1;
                continue;
            }
        };
        if ann.rejected {
            tally.rejected += 1;
            continue;
        }
        remap.apply(&mut ann);
        let img_path = dir.join("images").join(format!("{}.png", ann.image_id));
        let bounds = match image::image_dimensions(&img_path) {
            Ok((w, h)) => ImageBounds { width: w, height: h },
            Err(_) => {
                tally.malformed += 1;
                continue;
            }
        };
        match parse_annotation(&serde_json::to_string(&ann)?, bounds) {
            Ok(a) => kept.push(a),
            Err(crate::error::AnnotationError::KeypointCount { .. }) => tally.count += 1,
            Err(crate::error::AnnotationError::OutOfBounds { .. })
            | Err(crate::error::AnnotationError::NonFinite { .. }) => tally.bounds += 1,
            Err(_) => tally.malformed += 1,
        }
    }
    Ok((kept, tally))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_16_hex_digits() {
        let id = image_id(b"abc");
        assert_eq!(id.len(), 16);
        assert_eq!(id, "ba7816bf8f01cfea");
    }

    #[test]
    fn resize_halves_keypoints() {
        let img = Image::filled(160, 160, [0.2, 0.4, 0.6]);
        let mut kps = [[80.0, 80.0]; 6];
        kps[1] = [100.0, 20.0];
        let ann = ConeAnnotation::new("x", kps, ConeColor::Blue);
        let s = to_training_sample(&ann, &img.to_png_bytes(), 80, 2.0).unwrap();
        assert_eq!(s.keypoints[0], [40.0, 40.0]);
        assert_eq!(s.keypoints[1], [50.0, 10.0]);
        assert!(s.input.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s.heatmaps.shape(), &[6, 80, 80]);
    }

    #[test]
    fn undecodable_image_is_an_error() {
        let ann = ConeAnnotation::new("x", [[1.0, 1.0]; 6], ConeColor::Blue);
        assert!(to_training_sample(&ann, b"junk", 80, 2.0).is_err());
    }
}
