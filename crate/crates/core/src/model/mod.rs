//! Keypoint regressors: configuration, inference and training.

pub mod blocks;
pub mod checkpoint;
pub mod resnet;
pub mod train;
pub mod unet;

use conekp_tensor::nn::Module;
use conekp_tensor::{Mode, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, TrainingMetadata};
pub use resnet::{ResNet, ResidualBlock};
pub use train::{train, AugmentConfig, EpochRecord, StepRecord, TrainConfig, TrainLog};
pub use unet::UNet;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::keypoints::Point;
use crate::loss::LossMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    UNet,
    ResNet,
}

impl Arch {
    pub fn label(self) -> &'static str {
        match self {
            Arch::UNet => "UNet",
            Arch::ResNet => "ResNet-style",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "unet" => Ok(Arch::UNet),
            "resnet" => Ok(Arch::ResNet),
            _ => Err(format!("unknown architecture `{s}` (expected unet or resnet)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_keypoints: usize,
    pub input_size: usize,
    pub dropout: f64,
    pub base_width: usize,
    pub arch: Arch,
    pub loss_mode: LossMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_keypoints: 6,
            input_size: 80,
            dropout: 0.3,
            base_width: 64,
            arch: Arch::UNet,
            loss_mode: LossMode::SmoothL1,
        }
    }
}

impl ModelConfig {
    /// Width-8 preset for CPU training.
    pub fn desk(arch: Arch) -> Self {
        Self {
            base_width: 8,
            arch,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return bad(format!(
                "input_size must be a positive multiple of 8, got {}",
                self.input_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.in_channels == 0 || self.num_keypoints == 0 || self.base_width == 0 {
            return bad("in_channels, num_keypoints and base_width must be positive".into());
        }
        Ok(())
    }
}

/// Raw batched network output.
#[derive(Clone, Debug)]
pub struct NetOutput<T> {
    /// `[N, K, H, W]` probability maps (UNet only).
    pub heatmaps: Option<Tensor<T>>,
    /// `[N, K, 2]` unclamped `(x, y)`.
    pub coords: Tensor<T>,
}

#[derive(Clone, Debug)]
pub enum Network<T> {
    UNet(UNet<T>),
    ResNet(ResNet<T>),
}

impl<T: Scalar> Network<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        Ok(match c.arch {
            Arch::UNet => Network::UNet(UNet::new(
                c.in_channels,
                c.num_keypoints,
                c.input_size,
                c.base_width,
                c.dropout,
                &mut rng,
            )?),
            Arch::ResNet => Network::ResNet(ResNet::new(
                c.in_channels,
                c.num_keypoints,
                c.input_size,
                c.base_width,
                &mut rng,
            )),
        })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<NetOutput<T>> {
        Ok(match self {
            Network::UNet(n) => n.infer(x)?,
            Network::ResNet(n) => n.infer(x)?,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<NetOutput<T>> {
        Ok(match self {
            Network::UNet(n) => n.forward(x, mode, seed)?,
            Network::ResNet(n) => n.forward(x, mode)?,
        })
    }

    pub fn backward(&mut self, g_heat: Option<&Tensor<T>>, g_coords: &Tensor<T>) -> Result<()> {
        match self {
            Network::UNet(n) => n.backward(g_heat, g_coords)?,
            Network::ResNet(n) => n.backward(g_coords)?,
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, t| t.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match self {
            Network::UNet(n) => n.visit_params(prefix, f),
            Network::ResNet(n) => n.visit_params(prefix, f),
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match self {
            Network::UNet(n) => n.visit_buffers(prefix, f),
            Network::ResNet(n) => n.visit_buffers(prefix, f),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KeypointPrediction {
    /// `[K, H, W]`, each channel summing to one. Absent for regression-only
    /// models.
    #[serde(skip)]
    pub heatmaps: Option<Tensor<f32>>,
    pub keypoints: Vec<Point>,
    pub confidences: Vec<f64>,
}

/// Peak height relative to a uniform map: 0 for uniform, 1 for one-hot.
pub fn heatmap_confidence(channel: &[f32]) -> f64 {
    let hw = channel.len() as f64;
    if hw <= 1.0 {
        return 1.0;
    }
    let peak = channel.iter().copied().fold(f32::MIN, f32::max) as f64;
    ((peak * hw - 1.0) / (hw - 1.0)).clamp(0.0, 1.0)
}

/// Splits a batched output into per-image predictions with keypoints
/// clamped to the image.
pub fn split_predictions(out: &NetOutput<f32>, size: usize) -> Vec<KeypointPrediction> {
    let [n, k, _] = [out.coords.shape()[0], out.coords.shape()[1], 2];
    let hi = (size - 1) as f64;
    (0..n)
        .map(|s| {
            let xy = &out.coords.values()[s * k * 2..(s + 1) * k * 2];
            let keypoints = xy
                .chunks(2)
                .map(|c| [(c[0] as f64).clamp(0.0, hi), (c[1] as f64).clamp(0.0, hi)])
                .collect();
            let (heatmaps, confidences) = match &out.heatmaps {
                Some(h) => {
                    let one = h.index_outer(s);
                    let plane = one.len() / k;
                    let conf = one.values().chunks(plane).map(heatmap_confidence).collect();
                    (Some(one), conf)
                }
                None => (None, vec![1.0; k]),
            };
            KeypointPrediction {
                heatmaps,
                keypoints,
                confidences,
            }
        })
        .collect()
}

/// A configured network ready for inference.
#[derive(Clone, Debug)]
pub struct KeypointModel {
    pub config: ModelConfig,
    pub net: Network<f32>,
}

/// Inference batch size.
const INFER_BATCH: usize = 32;

impl KeypointModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let net = Network::new(&config, seed)?;
        Ok(Self { config, net })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::from_checkpoint_with_config(ckpt, ckpt.config.clone())
    }

    /// Builds `config` and loads the checkpoint tensors into it.
    pub fn from_checkpoint_with_config(ckpt: &Checkpoint, config: ModelConfig) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        ckpt.apply(&mut model.net)?;
        Ok(model)
    }

    /// Eval-mode prediction on a `[3, S, S]` or `[N, 3, S, S]` tensor.
    pub fn predict_tensor(&self, x: &Tensor<f32>) -> Result<Vec<KeypointPrediction>> {
        let x = if x.shape().len() == 3 {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            x.clone().reshape(&s)?
        } else {
            x.clone()
        };
        let out = self.net.infer(&x)?;
        Ok(split_predictions(&out, self.config.input_size))
    }

    pub fn predict(&self, image: &Image) -> Result<KeypointPrediction> {
        Ok(self.predict_images(std::slice::from_ref(image))?.remove(0))
    }

    pub fn predict_images(&self, images: &[Image]) -> Result<Vec<KeypointPrediction>> {
        let s = self.config.input_size;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_BATCH) {
            let tensors: Vec<Tensor<f32>> = chunk
                .iter()
                .map(|im| {
                    if im.width() == s && im.height() == s {
                        im.to_tensor()
                    } else {
                        im.resize(s, s).to_tensor()
                    }
                })
                .collect();
            out.extend(self.predict_tensor(&Tensor::stack(&tensors)?)?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&mut self, metadata: TrainingMetadata) -> Checkpoint {
        Checkpoint::capture(&self.config, &mut self.net, metadata)
    }
}
