use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use conekp::data::dataset::{load_split, read_manifest, write_atomic};
use conekp::data::split::Split;
use conekp::loss::LossMode;
use conekp::model::{
    save_checkpoint, train, Arch, AugmentConfig, Checkpoint, EpochRecord, ModelConfig, TrainConfig, TrainLog,
};
use serde::{Deserialize, Serialize};

use crate::config;

pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Args, Debug, Default, Serialize)]
pub struct TrainFlags {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint and loss logs.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// `unet` or `resnet`.
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Base channel width.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// `smooth_l1` or `l1`.
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Weight of the position term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Heatmap target sigma, px.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quarter-turn rotation augmentation.
    #[arg(long)]
    pub rotations: Option<bool>,
    /// Random boundary-crop augmentation.
    #[arg(long)]
    pub boundary_crop: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub arch: Arch,
    pub width: usize,
    pub input_size: usize,
    pub dropout: f64,
    pub loss: LossMode,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub seed: u64,
    pub rotations: bool,
    pub boundary_crop: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk(Arch::UNet);
        let t = TrainConfig::default();
        Self {
            data: None,
            out: None,
            arch: m.arch,
            width: m.base_width,
            input_size: m.input_size,
            dropout: m.dropout,
            loss: m.loss_mode,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            lambda: t.lambda,
            sigma: t.sigma,
            seed: t.seed,
            rotations: t.augment.rotations,
            boundary_crop: t.augment.boundary_crop,
        }
    }
}

impl TrainRunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            base_width: self.width,
            input_size: self.input_size,
            dropout: self.dropout,
            loss_mode: self.loss,
            ..ModelConfig::default()
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lr: self.lr,
            weight_decay: self.weight_decay,
            lambda: self.lambda,
            sigma: self.sigma,
            augment: AugmentConfig {
                rotations: self.rotations,
                boundary_crop: self.boundary_crop,
            },
            ..TrainConfig::default()
        }
    }
}

fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
    for e in epochs {
        s.push_str(&format!(
            "{},{},{},{:.3}\n",
            e.epoch, e.train_loss, e.val_loss, e.seconds
        ));
    }
    s
}

/// Trains on the dataset's train split, selecting on the val split.
pub fn run(cfg: &TrainRunConfig) -> Result<(Checkpoint, TrainLog)> {
    let Some(data) = &cfg.data else {
        bail!("train needs a dataset directory (--data)")
    };
    let Some(out) = &cfg.out else {
        bail!("train needs an output directory (--out)")
    };
    let model = cfg.model();
    model.validate()?;
    let manifest = read_manifest(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let train_set = load_split(data, &manifest, Split::Train, model.input_size)?;
    let val_set = load_split(data, &manifest, Split::Val, model.input_size)?;
    eprintln!(
        "training {} (width {}) on {} samples, validating on {}",
        model.arch.label(),
        model.base_width,
        train_set.len(),
        val_set.len()
    );
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    config::echo(out, cfg)?;
    let (ckpt, log) = train(&model, &train_set, &val_set, &cfg.training(), |e| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  ({:.1}s)",
            e.epoch, e.train_loss, e.val_loss, e.seconds
        );
    })?;
    save_checkpoint(&ckpt, &out.join(CHECKPOINT_FILE))?;
    write_atomic(&out.join("loss_log.jsonl"), log.to_jsonl().as_bytes())?;
    write_atomic(&out.join("epochs.csv"), epochs_csv(&log.epochs).as_bytes())?;
    Ok((ckpt, log))
}
