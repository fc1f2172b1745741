use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::{Mode, Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu_backward", input, grad_out)?;
    let g = input
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), g)
}

/// Inverted dropout. The keep mask is drawn from `seed`, so equal seeds give
/// bit-identical masks. Returns the output and the scaled mask (empty in eval
/// mode, where the op is the identity).
pub fn dropout<T: Scalar>(input: &Tensor<T>, rate: f64, mode: Mode, seed: u64) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::invalid(
            "dropout",
            format!("rate must lie in [0, 1), got {rate}"),
        ));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = input.values().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape(), out)?, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &[T], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.is_empty() {
        return Ok(grad_out.clone());
    }
    if mask.len() != grad_out.len() {
        return Err(TensorError::shape("dropout_backward", "mask length mismatch"));
    }
    let g = grad_out.values().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::new(grad_out.shape(), g)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let v = a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), v)
}

/// Concatenates two `[N, C, H, W]` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "concat_channels";
    let [n, ca, h, w] = a.dims4(OP)?;
    let [nb, cb, hb, wb] = b.dims4(OP)?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(TensorError::shape(
            OP,
            format!("{:?} and {:?} differ outside the channel axis", a.shape(), b.shape()),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        out.extend_from_slice(&a.values()[s * ca * plane..(s + 1) * ca * plane]);
        out.extend_from_slice(&b.values()[s * cb * plane..(s + 1) * cb * plane]);
    }
    Tensor::new(&[n, ca + cb, h, w], out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    const OP: &str = "split_channels";
    let [n, c, h, w] = t.dims4(OP)?;
    if first == 0 || first >= c {
        return Err(TensorError::invalid(
            OP,
            format!("cannot split {c} channels at {first}"),
        ));
    }
    let plane = h * w;
    let second = c - first;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * second * plane);
    for s in 0..n {
        let base = s * c * plane;
        a.extend_from_slice(&t.values()[base..base + first * plane]);
        b.extend_from_slice(&t.values()[base + first * plane..base + c * plane]);
    }
    Ok((Tensor::new(&[n, first, h, w], a)?, Tensor::new(&[n, second, h, w], b)?))
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}
