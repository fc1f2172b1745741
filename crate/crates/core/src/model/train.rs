//! Mini-batch training with AdamW and best-validation checkpoint selection.

use conekp_tensor::nn::Module;
use conekp_tensor::optim::{exp_lr, AdamW, AdamWConfig};
use conekp_tensor::{Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::mix_seed;
use super::checkpoint::{Checkpoint, TrainingMetadata};
use super::{ModelConfig, NetOutput, Network};
use crate::data::augment::{random_boundary_crop, rotate_augment, Rotation};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::keypoints::ConeKeypoints;
use crate::loss::{heatmap_target, loss_and_grad, LossConfig, LossTerms};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Train on all four quarter-turn rotations of every sample.
    pub rotations: bool,
    /// Re-draw a random boundary crop for every sample each epoch.
    pub boundary_crop: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotations: true,
            boundary_crop: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let o = AdamWConfig::default();
        let l = LossConfig::default();
        Self {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            weight_decay: o.weight_decay,
            lambda: l.lambda,
            sigma: l.sigma,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u32,
    pub lr: f64,
    pub loss: f64,
    pub heatmap: f64,
    pub position: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line: step records, then epoch records.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::json!({"kind": "step", "record": s}).to_string());
            out.push('\n');
        }
        for e in &self.epochs {
            out.push_str(&serde_json::json!({"kind": "epoch", "record": e}).to_string());
            out.push('\n');
        }
        out
    }
}

struct Batch {
    input: Tensor<f32>,
    coords: Vec<f32>,
    heatmaps: Vec<f32>,
}

fn make_batch(items: &[(Image, ConeKeypoints)], size: usize, k: usize, sigma: f64, with_heat: bool) -> Result<Batch> {
    let tensors: Vec<Tensor<f32>> = items.iter().map(|(im, _)| im.to_tensor()).collect();
    let mut coords = Vec::with_capacity(items.len() * k * 2);
    let mut heatmaps = Vec::new();
    for (_, kps) in items {
        coords.extend(kps.iter().flat_map(|p| [p[0] as f32, p[1] as f32]));
        if with_heat {
            heatmaps.extend_from_slice(heatmap_target(kps, size, size, sigma)?.values());
        }
    }
    Ok(Batch {
        input: Tensor::stack(&tensors)?,
        coords,
        heatmaps,
    })
}

fn batch_loss(out: &NetOutput<f32>, batch: &Batch, cfg: &LossConfig) -> Result<(LossTerms, Vec<f32>, Vec<f32>)> {
    let heat = out.heatmaps.as_ref().map(|h| {
        let s = h.shape();
        ((h.values(), batch.heatmaps.as_slice()), [s[0], s[1], s[2], s[3]])
    });
    let dims = heat.map(|h| h.1).unwrap_or([0; 4]);
    loss_and_grad(heat.map(|h| h.0), dims, out.coords.values(), &batch.coords, cfg)
}

/// Mean loss over `samples` in eval mode.
pub fn evaluate_loss(net: &Network<f32>, config: &ModelConfig, samples: &[Sample], loss: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    let with_heat = matches!(net, Network::UNet(_));
    for chunk in samples.chunks(32) {
        let items: Vec<(Image, ConeKeypoints)> = chunk.iter().map(|s| (s.image.clone(), s.keypoints)).collect();
        let batch = make_batch(&items, config.input_size, config.num_keypoints, loss.sigma, with_heat)?;
        let out = net.infer(&batch.input)?;
        total += batch_loss(&out, &batch, loss)?.0.total * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn variant(sample: &Sample, rot: Rotation, crop_seed: Option<u64>) -> Result<(Image, ConeKeypoints)> {
    let (mut img, mut kps) = if rot == Rotation::None {
        (sample.image.clone(), sample.keypoints)
    } else {
        rotate_augment(&sample.image, &sample.keypoints, rot)?
    };
    if let Some(seed) = crop_seed {
        let c = random_boundary_crop(&img, &kps, seed);
        img = c.image;
        kps = c.keypoints;
    }
    Ok((img, kps))
}

/// Trains `config` on `train` and returns the checkpoint with the lowest
/// validation loss plus the loss log. `on_epoch` is called after every epoch.
pub fn train(
    config: &ModelConfig,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainLog)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty(format!(
            "training needs non-empty splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut net: Network<f32> = Network::new(config, cfg.seed)?;
    let loss_cfg = LossConfig {
        mode: config.loss_mode,
        lambda: cfg.lambda,
        sigma: cfg.sigma,
    };
    let with_heat = matches!(net, Network::UNet(_));
    let mut log = TrainLog::default();
    let mut best = Checkpoint::capture(
        config,
        &mut net,
        TrainingMetadata {
            epoch: 0,
            best_val_loss: None,
            seed: cfg.seed,
        },
    );
    let mut best_loss = f64::INFINITY;
    let mut opt = AdamW::new(cfg.optimizer());

    let rotations: &[Rotation] = if cfg.augment.rotations {
        &Rotation::ALL
    } else {
        &[Rotation::None]
    };
    let mut order: Vec<(usize, Rotation)> = (0..train.len())
        .flat_map(|i| rotations.iter().map(move |&r| (i, r)))
        .collect();

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        opt.set_lr(exp_lr(cfg.lr, epoch));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, 0xE90C));
        order.sort_unstable_by_key(|&(i, r)| (i, r.quarter_turns()));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let items = chunk
                .iter()
                .map(|&(i, r)| {
                    let crop = cfg.augment.boundary_crop.then(|| {
                        mix_seed(
                            cfg.seed,
                            (epoch as u64) << 32 | i as u64,
                            0xC0 + r.quarter_turns() as u64,
                        )
                    });
                    variant(&train[i], r, crop)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = make_batch(
                &items,
                config.input_size,
                config.num_keypoints,
                loss_cfg.sigma,
                with_heat,
            )?;
            let step = opt.step_count();
            let out = net.forward(&batch.input, Mode::Train, mix_seed(cfg.seed, step, 0xD0))?;
            if !out.coords.all_finite() || out.heatmaps.as_ref().is_some_and(|h| !h.all_finite()) {
                return Err(Error::NonFiniteLoss { step, epoch });
            }
            let (terms, g_heat, g_xy) = batch_loss(&out, &batch, &loss_cfg)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFiniteLoss { step, epoch });
            }
            net.zero_grad();
            let g_heat = match &out.heatmaps {
                Some(h) => Some(Tensor::new(h.shape(), g_heat)?),
                None => None,
            };
            let g_xy = Tensor::new(out.coords.shape(), g_xy)?;
            net.backward(g_heat.as_ref(), &g_xy)?;
            opt.step_visit(|f| net.visit_params("", f))?;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr: opt.config.lr,
                loss: terms.total,
                heatmap: terms.heatmap,
                position: terms.position,
            });
            epoch_loss += terms.total * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_loss = evaluate_loss(&net, config, val, &loss_cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: opt.step_count(),
                epoch,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / seen as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log.epochs.push(record);
        on_epoch(&record);
        if val_loss < best_loss {
            best_loss = val_loss;
            best = Checkpoint::capture(
                config,
                &mut net,
                TrainingMetadata {
                    epoch: epoch + 1,
                    best_val_loss: Some(val_loss),
                    seed: cfg.seed,
                },
            );
        }
    }
    Ok((best, log))
}
