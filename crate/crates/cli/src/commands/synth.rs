use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use conekp::data::dataset::{write_atomic, write_crop_dataset};
use conekp::data::split::{DatasetManifest, Split};
use conekp::synth::{generate_crops, item_seed, random_scene, render_stereo_scene, CropStyle, SceneSampler};
use conekp::StereoRig;
use serde::{Deserialize, Serialize};

use crate::config;

#[derive(Args, Debug, Default, Serialize)]
pub struct SynthFlags {
    /// Output dataset directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Number of cone crops.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for the train/val/test split; defaults to `seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Number of stereo scenes to render alongside the crops.
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub split_seed: Option<u64>,
    pub scenes: usize,
    pub style: CropStyle,
    pub sampler: SceneSampler,
    pub rig: StereoRig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            out: None,
            count: 100,
            seed: 0,
            split_seed: None,
            scenes: 0,
            style: CropStyle::default(),
            sampler: SceneSampler::default(),
            rig: StereoRig::default(),
        }
    }
}

pub fn run(cfg: &SynthConfig) -> Result<DatasetManifest> {
    let Some(out) = &cfg.out else {
        bail!("synth needs an output directory (--out)")
    };
    let crops = generate_crops(cfg.count, cfg.seed, &cfg.style);
    let manifest = write_crop_dataset(out, &crops, cfg.split_seed.unwrap_or(cfg.seed))
        .with_context(|| format!("writing dataset to {}", out.display()))?;
    if cfg.scenes > 0 {
        cfg.rig.validate()?;
        let dir = out.join("scenes");
        write_atomic(&dir.join("rig.toml"), cfg.rig.to_toml_string().as_bytes())?;
        for i in 0..cfg.scenes {
            let spec = random_scene(item_seed(cfg.seed ^ 0x5CE4E, i as u64), &cfg.sampler, &cfg.rig)?;
            let frame = render_stereo_scene(&spec, &cfg.rig)?;
            let stem = format!("scene_{i:04}");
            write_atomic(&dir.join(format!("{stem}_left.png")), &frame.left.to_png_bytes())?;
            write_atomic(&dir.join(format!("{stem}_right.png")), &frame.right.to_png_bytes())?;
            let doc = serde_json::json!({ "spec": spec, "cones": frame.cones, "omitted": frame.omitted });
            write_atomic(
                &dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&doc)?.as_bytes(),
            )?;
        }
    }
    config::echo(out, cfg)?;
    eprintln!(
        "wrote {} crops ({} train / {} val / {} test) and {} scenes to {}",
        manifest.items.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        cfg.scenes,
        out.display()
    );
    Ok(manifest)
}
