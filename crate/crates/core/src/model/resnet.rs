//! Residual regression baseline: pooled features to a linear coordinate head.

use conekp_tensor::nn::{join, BatchNorm2d, Conv2d, Linear, Module, Relu};
use conekp_tensor::ops;
use conekp_tensor::{Mode, Result, Scalar, Tensor, TensorError};
use rand::Rng;

use super::blocks::ConvBnRelu;
use super::NetOutput;

/// Pre-activation residual block: `y = conv(relu(bn(conv(relu(bn(x)))))) + s`
/// where `s` is `x`, or a strided 1x1 projection of the pre-activation when
/// the shape changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T> {
    pub bn1: BatchNorm2d<T>,
    pub conv1: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub shortcut: Option<Conv2d<T>>,
    relu1: Relu<T>,
    relu2: Relu<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Self {
        let shortcut = (c_in != c_out || stride != 1).then(|| Conv2d::new(c_in, c_out, 1, stride, 0, rng));
        Self {
            bn1: BatchNorm2d::new(c_in),
            conv1: Conv2d::new(c_in, c_out, 3, stride, 1, rng),
            bn2: BatchNorm2d::new(c_out),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, rng),
            shortcut,
            relu1: Relu::new(),
            relu2: Relu::new(),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = ops::relu(&self.bn1.infer(x)?);
        let h = self.conv1.infer(&a)?;
        let h = self.conv2.infer(&ops::relu(&self.bn2.infer(&h)?))?;
        let s = match &self.shortcut {
            Some(c) => c.infer(&a)?,
            None => x.clone(),
        };
        ops::add(&h, &s)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let a = self.relu1.forward(&self.bn1.forward(x, mode)?);
        let h = self.conv1.forward(&a)?;
        let h = self.relu2.forward(&self.bn2.forward(&h, mode)?);
        let h = self.conv2.forward(&h)?;
        let s = match &mut self.shortcut {
            Some(c) => c.forward(&a)?,
            None => x.clone(),
        };
        ops::add(&h, &s)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let gh = self.conv2.backward(g)?;
        let gh = self.bn2.backward(&self.relu2.backward(&gh)?)?;
        let mut ga = self.conv1.backward(&gh)?;
        if let Some(c) = &mut self.shortcut {
            ga = ops::add(&ga, &c.backward(g)?)?;
        }
        let gx = self.bn1.backward(&self.relu1.backward(&ga)?)?;
        if self.shortcut.is_none() {
            return ops::add(&gx, g);
        }
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        if let Some(c) = &mut self.shortcut {
            c.visit_params(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
    }
}

/// Stem (stride 2), four residual blocks of widths `2b, 4b, 8b, 8b`
/// (strides 1, 2, 2, 2), final bn-relu, global pooling and a linear head.
#[derive(Clone, Debug)]
pub struct ResNet<T> {
    pub stem: ConvBnRelu<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub bn: BatchNorm2d<T>,
    pub fc: Linear<T>,
    relu: Relu<T>,
    keypoints: usize,
    size: usize,
    pooled_from: Option<Vec<usize>>,
}

impl<T: Scalar> ResNet<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, keypoints: usize, size: usize, width: usize, rng: &mut R) -> Self {
        let b = width;
        let stem = ConvBnRelu::new(in_channels, 2 * b, 3, 2, rng);
        let plan = [
            (2 * b, 2 * b, 1),
            (2 * b, 4 * b, 2),
            (4 * b, 8 * b, 2),
            (8 * b, 8 * b, 2),
        ];
        let blocks = plan.iter().map(|&(i, o, s)| ResidualBlock::new(i, o, s, rng)).collect();
        Self {
            stem,
            blocks,
            bn: BatchNorm2d::new(8 * b),
            fc: Linear::new(8 * b, 2 * keypoints, rng),
            relu: Relu::new(),
            keypoints,
            size,
            pooled_from: None,
        }
    }

    fn half(&self) -> T {
        T::lit((self.size as f64 - 1.0) / 2.0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[2] != self.size || s[3] != self.size {
            return Err(TensorError::Shape {
                op: "resnet",
                detail: format!("expected [N, C, {0}, {0}] input, got {s:?}", self.size),
            });
        }
        Ok(())
    }

    fn to_coords(&self, u: Tensor<T>) -> Result<NetOutput<T>> {
        let m = self.half();
        let n = u.shape()[0];
        Ok(NetOutput {
            heatmaps: None,
            coords: Tensor::new(&[n, self.keypoints, 2], u.values().iter().map(|&v| m + m * v).collect())?,
        })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<NetOutput<T>> {
        self.check_input(x)?;
        let mut h = self.stem.infer(x)?;
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        let h = ops::relu(&self.bn.infer(&h)?);
        self.to_coords(self.fc.infer(&ops::global_avg_pool(&h)?)?)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<NetOutput<T>> {
        self.check_input(x)?;
        let mut h = self.stem.forward(x, mode)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        let h = self.relu.forward(&self.bn.forward(&h, mode)?);
        self.pooled_from = Some(h.shape().to_vec());
        let u = self.fc.forward(&ops::global_avg_pool(&h)?)?;
        self.to_coords(u)
    }

    pub fn backward(&mut self, g_coords: &Tensor<T>) -> Result<()> {
        let shape = self
            .pooled_from
            .take()
            .ok_or(TensorError::MissingContext { op: "resnet" })?;
        let m = self.half();
        let n = g_coords.shape()[0];
        let gu = Tensor::new(
            &[n, 2 * self.keypoints],
            g_coords.values().iter().map(|&g| g * m).collect(),
        )?;
        let gp = self.fc.backward(&gu)?;
        let g = ops::global_avg_pool_backward(&shape, &gp)?;
        let mut g = self.bn.backward(&self.relu.backward(&g)?)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        self.stem.backward(&g)?;
        Ok(())
    }
}

impl<T: Scalar> Module<T> for ResNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.bn.visit_params(&join(prefix, "bn"), f);
        self.fc.visit_params(&join(prefix, "fc"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stem.visit_buffers(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}
