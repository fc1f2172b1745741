//! Encoder-decoder heatmap regressor with a linear coordinate head.

use conekp_tensor::nn::{join, Conv2d, Linear, Module};
use conekp_tensor::ops;
use conekp_tensor::{Mode, Result, Scalar, Tensor, TensorError};
use rand::Rng;

use super::blocks::{mix_seed, ConvBlock, ConvBnRelu};
use super::NetOutput;

/// Cached tensors needed by backward.
#[derive(Clone, Debug)]
struct Cache<T> {
    probs: Tensor<T>,
    bottleneck_shape: Vec<usize>,
}

/// Channel plan `b -> 2b -> 4b -> 8b` with three stride-2 stages, a mirrored
/// decoder with skip concatenations, a 1x1 heatmap head and a linear head
/// that refines the soft-argmax coordinates using pooled bottleneck features.
#[derive(Clone, Debug)]
pub struct UNet<T> {
    pub enc0: ConvBlock<T>,
    pub enc1: ConvBlock<T>,
    pub enc2: ConvBlock<T>,
    pub bottleneck: ConvBlock<T>,
    pub up2: ConvBnRelu<T>,
    pub dec2: ConvBlock<T>,
    pub up1: ConvBnRelu<T>,
    pub dec1: ConvBlock<T>,
    pub up0: ConvBnRelu<T>,
    pub dec0: ConvBlock<T>,
    pub head: Conv2d<T>,
    pub coord: Linear<T>,
    keypoints: usize,
    size: usize,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> UNet<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        keypoints: usize,
        size: usize,
        width: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let b = width;
        let enc0 = ConvBlock::new(in_channels, b, 1, dropout, rng)?;
        let enc1 = ConvBlock::new(b, 2 * b, 2, dropout, rng)?;
        let enc2 = ConvBlock::new(2 * b, 4 * b, 2, dropout, rng)?;
        let bottleneck = ConvBlock::new(4 * b, 8 * b, 2, 0.0, rng)?;
        // A 1x1 conv commutes with nearest upsampling, so the channel
        // projection runs at the coarse resolution.
        let up2 = ConvBnRelu::new(8 * b, 4 * b, 1, 1, rng);
        let dec2 = ConvBlock::new(8 * b, 4 * b, 1, 0.0, rng)?;
        let up1 = ConvBnRelu::new(4 * b, 2 * b, 1, 1, rng);
        let dec1 = ConvBlock::new(4 * b, 2 * b, 1, 0.0, rng)?;
        let up0 = ConvBnRelu::new(2 * b, b, 1, 1, rng);
        let dec0 = ConvBlock::new(2 * b, b, 1, 0.0, rng)?;
        let head = Conv2d::new(b, keypoints, 1, 1, 0, rng);
        let mut coord = Linear::new(2 * keypoints + 8 * b, 2 * keypoints, rng);
        // Start as the identity on the soft-argmax coordinates.
        let f = 2 * keypoints + 8 * b;
        for v in coord.weight.values_mut() {
            *v = T::zero();
        }
        for i in 0..2 * keypoints {
            coord.weight.values_mut()[i * f + i] = T::one();
        }
        for v in coord.bias.values_mut() {
            *v = T::zero();
        }
        Ok(Self {
            enc0,
            enc1,
            enc2,
            bottleneck,
            up2,
            dec2,
            up1,
            dec1,
            up0,
            dec0,
            head,
            coord,
            keypoints,
            size,
            cache: None,
        })
    }

    fn half(&self) -> T {
        T::lit((self.size as f64 - 1.0) / 2.0)
    }

    fn coord_input(&self, c: &Tensor<T>, pooled: &Tensor<T>) -> Result<Tensor<T>> {
        let n = c.shape()[0];
        let k2 = 2 * self.keypoints;
        let f = pooled.shape()[1];
        let m = self.half();
        let mut v = Vec::with_capacity(n * (k2 + f));
        for s in 0..n {
            v.extend(c.values()[s * k2..(s + 1) * k2].iter().map(|&x| (x - m) / m));
            v.extend_from_slice(&pooled.values()[s * f..(s + 1) * f]);
        }
        Tensor::new(&[n, k2 + f], v)
    }

    fn coords_from_head(&self, u: Tensor<T>) -> Result<Tensor<T>> {
        let m = self.half();
        let n = u.shape()[0];
        Tensor::new(&[n, self.keypoints, 2], u.values().iter().map(|&v| m + m * v).collect())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[2] != self.size || s[3] != self.size {
            return Err(TensorError::Shape {
                op: "unet",
                detail: format!("expected [N, C, {0}, {0}] input, got {s:?}", self.size),
            });
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<NetOutput<T>> {
        self.check_input(x)?;
        let e0 = self.enc0.infer(x)?;
        let e1 = self.enc1.infer(&e0)?;
        let e2 = self.enc2.infer(&e1)?;
        let bt = self.bottleneck.infer(&e2)?;
        let u2 = ops::upsample2x(&self.up2.infer(&bt)?)?;
        let d2 = self.dec2.infer(&ops::concat_channels(&u2, &e2)?)?;
        let u1 = ops::upsample2x(&self.up1.infer(&d2)?)?;
        let d1 = self.dec1.infer(&ops::concat_channels(&u1, &e1)?)?;
        let u0 = ops::upsample2x(&self.up0.infer(&d1)?)?;
        let d0 = self.dec0.infer(&ops::concat_channels(&u0, &e0)?)?;
        let probs = ops::spatial_softmax(&self.head.infer(&d0)?)?;
        let c = ops::soft_argmax(&probs)?;
        let z = self.coord_input(&c, &ops::global_avg_pool(&bt)?)?;
        let coords = self.coords_from_head(self.coord.infer(&z)?)?;
        Ok(NetOutput {
            heatmaps: Some(probs),
            coords,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<NetOutput<T>> {
        self.check_input(x)?;
        let e0 = self.enc0.forward(x, mode, mix_seed(seed, 0, 0))?;
        let e1 = self.enc1.forward(&e0, mode, mix_seed(seed, 0, 1))?;
        let e2 = self.enc2.forward(&e1, mode, mix_seed(seed, 0, 2))?;
        let bt = self.bottleneck.forward(&e2, mode, 0)?;
        let u2 = ops::upsample2x(&self.up2.forward(&bt, mode)?)?;
        let d2 = self.dec2.forward(&ops::concat_channels(&u2, &e2)?, mode, 0)?;
        let u1 = ops::upsample2x(&self.up1.forward(&d2, mode)?)?;
        let d1 = self.dec1.forward(&ops::concat_channels(&u1, &e1)?, mode, 0)?;
        let u0 = ops::upsample2x(&self.up0.forward(&d1, mode)?)?;
        let d0 = self.dec0.forward(&ops::concat_channels(&u0, &e0)?, mode, 0)?;
        let probs = ops::spatial_softmax(&self.head.forward(&d0)?)?;
        let c = ops::soft_argmax(&probs)?;
        let z = self.coord_input(&c, &ops::global_avg_pool(&bt)?)?;
        let u = self.coord.forward(&z)?;
        let coords = self.coords_from_head(u)?;
        self.cache = Some(Cache {
            probs: probs.clone(),
            bottleneck_shape: bt.shape().to_vec(),
        });
        Ok(NetOutput {
            heatmaps: Some(probs),
            coords,
        })
    }

    /// Accumulates parameter gradients for the loss gradients with respect
    /// to the heatmaps (optional) and final coordinates.
    pub fn backward(&mut self, g_heat: Option<&Tensor<T>>, g_coords: &Tensor<T>) -> Result<()> {
        let cache = self.cache.take().ok_or(TensorError::MissingContext { op: "unet" })?;
        let n = g_coords.shape()[0];
        let k2 = 2 * self.keypoints;
        let m = self.half();
        let gu = Tensor::new(&[n, k2], g_coords.values().iter().map(|&g| g * m).collect())?;
        let gz = self.coord.backward(&gu)?;
        let f = gz.shape()[1];
        let fp = f - k2;
        let mut gc = Vec::with_capacity(n * k2);
        let mut gp = Vec::with_capacity(n * fp);
        for s in 0..n {
            let row = &gz.values()[s * f..(s + 1) * f];
            gc.extend(row[..k2].iter().map(|&g| g / m));
            gp.extend_from_slice(&row[k2..]);
        }
        let gc = Tensor::new(&[n, self.keypoints, 2], gc)?;
        let gp = Tensor::new(&[n, fp], gp)?;

        let mut gprobs = ops::soft_argmax_backward(cache.probs.shape(), &gc)?;
        if let Some(gh) = g_heat {
            gprobs = ops::add(&gprobs, gh)?;
        }
        let glogits = ops::spatial_softmax_backward(&cache.probs, &gprobs)?;
        let gd0 = self.head.backward(&glogits)?;

        let b = self.enc0.second.conv.out_channels();
        let (gu0, ge0) = ops::split_channels(&self.dec0.backward(&gd0)?, b)?;
        let gd1 = self.up0.backward(&ops::upsample2x_backward(&gu0)?)?;
        let (gu1, ge1) = ops::split_channels(&self.dec1.backward(&gd1)?, 2 * b)?;
        let gd2 = self.up1.backward(&ops::upsample2x_backward(&gu1)?)?;
        let (gu2, ge2) = ops::split_channels(&self.dec2.backward(&gd2)?, 4 * b)?;
        let gbt = ops::add(
            &self.up2.backward(&ops::upsample2x_backward(&gu2)?)?,
            &ops::global_avg_pool_backward(&cache.bottleneck_shape, &gp)?,
        )?;
        let g = ops::add(&self.bottleneck.backward(&gbt)?, &ge2)?;
        let g = ops::add(&self.enc2.backward(&g)?, &ge1)?;
        let g = ops::add(&self.enc1.backward(&g)?, &ge0)?;
        self.enc0.backward(&g)?;
        Ok(())
    }

    fn stages(&mut self) -> Vec<(&'static str, &mut dyn Module<T>)> {
        vec![
            ("enc0", &mut self.enc0),
            ("enc1", &mut self.enc1),
            ("enc2", &mut self.enc2),
            ("bottleneck", &mut self.bottleneck),
            ("up2", &mut self.up2),
            ("dec2", &mut self.dec2),
            ("up1", &mut self.up1),
            ("dec1", &mut self.dec1),
            ("up0", &mut self.up0),
            ("dec0", &mut self.dec0),
            ("head", &mut self.head),
            ("coord", &mut self.coord),
        ]
    }
}

impl<T: Scalar> Module<T> for UNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (name, m) in self.stages() {
            m.visit_params(&join(prefix, name), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (name, m) in self.stages() {
            m.visit_buffers(&join(prefix, name), f);
        }
    }
}
