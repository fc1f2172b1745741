//! Parameterized layers that cache their forward context for backward.
//!
//! `forward` takes `&mut self` and stores what backward needs; `infer` is the
//! read-only eval path used for concurrent inference. Backward accumulates
//! parameter gradients into each tensor's gradient buffer.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops::{self, BatchNormCtx, BatchNormState, Conv2dCtx};
use crate::{Mode, Scalar, Tensor};

/// Visits named parameters (trainable) and buffers (running statistics).
pub trait Module<T: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor<T>)) {}
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// He-style fan-in uniform initialization bound for ReLU networks.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    ctx: Option<Conv2dCtx<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: Tensor::uniform(&[c_out, c_in, kernel, kernel], fan_in_bound(fan_in), rng),
            bias: Tensor::uniform(&[c_out], 1.0 / (fan_in as f64).sqrt(), rng),
            stride,
            padding,
            ctx: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight, Some(&self.bias), self.stride, self.padding)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.ctx = Some(Conv2dCtx {
            input: x.clone(),
            weight: self.weight.clone(),
            stride: self.stride,
            padding: self.padding,
        });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.ctx.take().ok_or(TensorError::MissingContext { op: "conv2d" })?;
        let g = ops::conv2d_backward(&ctx, grad_out)?;
        self.weight.accumulate_grad(g.weight.values());
        self.bias.accumulate_grad(g.bias.values());
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed convolution layer; weight layout `[C_in, C_out, k, k]`.
#[derive(Clone, Debug)]
pub struct TransposedConv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    ctx: Option<Conv2dCtx<T>>,
}

impl<T: Scalar> TransposedConv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel * kernel / (stride * stride).max(1);
        Self {
            weight: Tensor::uniform(&[c_in, c_out, kernel, kernel], fan_in_bound(fan_in.max(1)), rng),
            bias: Tensor::uniform(&[c_out], 1.0 / (fan_in.max(1) as f64).sqrt(), rng),
            stride,
            padding,
            ctx: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::transposed_conv2d(x, &self.weight, Some(&self.bias), self.stride, self.padding)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.ctx = Some(Conv2dCtx {
            input: x.clone(),
            weight: self.weight.clone(),
            stride: self.stride,
            padding: self.padding,
        });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.ctx.take().ok_or(TensorError::MissingContext {
            op: "transposed_conv2d",
        })?;
        let g = ops::transposed_conv2d_backward(&ctx, grad_out)?;
        self.weight.accumulate_grad(g.weight.values());
        self.bias.accumulate_grad(g.bias.values());
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for TransposedConv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: BatchNormState<T>,
    ctx: Option<BatchNormCtx<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            state: BatchNormState::new(channels),
            ctx: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // Eval mode never touches the running statistics.
        let mut state = self.state.clone();
        ops::batchnorm(x, &self.gamma, &self.beta, &mut state, Mode::Eval).map(|(y, _)| y)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, ctx) = ops::batchnorm(x, &self.gamma, &self.beta, &mut self.state, mode)?;
        self.ctx = Some(ctx);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.ctx.take().ok_or(TensorError::MissingContext { op: "batchnorm" })?;
        let g = ops::batchnorm_backward(&ctx, grad_out)?;
        self.gamma.accumulate_grad(g.gamma.values());
        self.beta.accumulate_grad(g.beta.values());
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "running_mean"), &mut self.state.running_mean);
        f(join(prefix, "running_var"), &mut self.state.running_var);
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[out_features, in_features], bound, rng),
            bias: Tensor::uniform(&[out_features], bound, rng),
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, &self.weight, &self.bias)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or(TensorError::MissingContext { op: "linear" })?;
        let g = ops::linear_backward(&x, &self.weight, grad_out)?;
        self.weight.accumulate_grad(g.weight.values());
        self.bias.accumulate_grad(g.bias.values());
        Ok(g.input)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = ops::relu(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.take().ok_or(TensorError::MissingContext { op: "relu" })?;
        ops::relu_backward(&y, grad_out)
    }
}

#[derive(Clone, Debug)]
pub struct Dropout<T> {
    pub rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("rate must lie in [0, 1), got {rate}"),
            });
        }
        Ok(Self { rate, mask: None })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        let (y, mask) = ops::dropout(x, self.rate, mode, seed)?;
        self.mask = Some(mask);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.take().ok_or(TensorError::MissingContext { op: "dropout" })?;
        ops::dropout_backward(&mask, grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 1, &mut rng);
        let g = Tensor::zeros(&[1, 1, 4, 4]);
        assert_eq!(
            conv.backward(&g).unwrap_err(),
            TensorError::MissingContext { op: "conv2d" }
        );
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, &mut rng);
        let x = Tensor::uniform(&[2, 2, 5, 5], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        let gx = conv.backward(&Tensor::zeros(y.shape())).unwrap();
        assert!(gx.values().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad().unwrap().iter().all(|&v| v == 0.0));
        assert!(conv.bias.grad().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn visits_named_parameters() {
        let mut bn = BatchNorm2d::<f32>::new(4);
        let mut names = Vec::new();
        bn.visit_params("enc0.bn1", &mut |n, _| names.push(n));
        bn.visit_buffers("enc0.bn1", &mut |n, _| names.push(n));
        assert_eq!(
            names,
            [
                "enc0.bn1.gamma",
                "enc0.bn1.beta",
                "enc0.bn1.running_mean",
                "enc0.bn1.running_var"
            ]
        );
    }
}
