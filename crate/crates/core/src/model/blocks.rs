//! Convolution building blocks shared by both architectures.

use conekp_tensor::nn::{join, BatchNorm2d, Conv2d, Dropout, Module, Relu};
use conekp_tensor::{Mode, Result, Scalar, Tensor};
use rand::Rng;

/// Mixes a run seed with a step and layer index into a dropout seed.
pub fn mix_seed(seed: u64, step: u64, layer: u64) -> u64 {
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(layer.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// conv -> batchnorm -> relu.
#[derive(Clone, Debug)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    relu: Relu<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(c_in, c_out, k, stride, k / 2, rng),
            bn: BatchNorm2d::new(c_out),
            relu: Relu::new(),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(conekp_tensor::ops::relu(&self.bn.infer(&self.conv.infer(x)?)?))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        let y = self.bn.forward(&y, mode)?;
        Ok(self.relu.forward(&y))
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.relu.backward(g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit(&mut self, prefix: &str, conv: &str, bn: &str, f: &mut dyn FnMut(String, &mut Tensor<T>), buffers: bool) {
        if buffers {
            self.bn.visit_buffers(&join(prefix, bn), f);
        } else {
            self.conv.visit_params(&join(prefix, conv), f);
            self.bn.visit_params(&join(prefix, bn), f);
        }
    }
}

impl<T: Scalar> Module<T> for ConvBnRelu<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.visit(prefix, "conv", "bn", f, false);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.visit(prefix, "conv", "bn", f, true);
    }
}

/// Two conv-bn-relu stages; the first may downsample. Optional dropout
/// after the second activation.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub first: ConvBnRelu<T>,
    pub second: ConvBnRelu<T>,
    dropout: Option<Dropout<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            first: ConvBnRelu::new(c_in, c_out, 3, stride, rng),
            second: ConvBnRelu::new(c_out, c_out, 3, 1, rng),
            dropout: if dropout > 0.0 {
                Some(Dropout::new(dropout)?)
            } else {
                None
            },
        })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.second.infer(&self.first.infer(x)?)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let y = self.first.forward(x, mode)?;
        let y = self.second.forward(&y, mode)?;
        match &mut self.dropout {
            Some(d) => d.forward(&y, mode, seed),
            None => Ok(y),
        }
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match &mut self.dropout {
            Some(d) => d.backward(g)?,
            None => g.clone(),
        };
        let g = self.second.backward(&g)?;
        self.first.backward(&g)
    }
}

impl<T: Scalar> Module<T> for ConvBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.first.visit(prefix, "conv1", "bn1", f, false);
        self.second.visit(prefix, "conv2", "bn2", f, false);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.first.visit(prefix, "conv1", "bn1", f, true);
        self.second.visit(prefix, "conv2", "bn2", f, true);
    }
}
