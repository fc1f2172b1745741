//! Spatial resampling, pooling and the heatmap normalization ops.

use crate::error::{Result, TensorError};
use crate::{Scalar, Tensor};

/// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
pub fn upsample2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("upsample2x")?;
    let x = input.values();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xo, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[xo / 2];
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "upsample2x_backward";
    let [n, c, oh, ow] = grad_out.dims4(OP)?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(TensorError::shape(OP, "gradient size must be even"));
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.values();
    let mut out = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let d = &mut dst[(y / 2) * w + xo / 2];
                *d = *d + src[y * ow + xo];
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let inv = T::lit(1.0 / plane as f64);
    let v = input
        .values()
        .chunks(plane)
        .map(|ch| ch.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[n, c], v)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = match *input_shape {
        [_, _, h, w] => (h, w),
        _ => return Err(TensorError::shape("global_avg_pool_backward", "input must be 4-D")),
    };
    let plane = h * w;
    let inv = T::lit(1.0 / plane as f64);
    let mut out = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.values() {
        out.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::new(input_shape, out)
}

/// Softmax over the `H x W` positions of every channel; each channel of the
/// result is a probability map summing to one.
pub fn spatial_softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = input.dims4("spatial_softmax")?;
    let plane = h * w;
    let mut out = Vec::with_capacity(input.len());
    for ch in input.values().chunks(plane) {
        let max = ch.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = ch.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| T::lit(e / total)));
    }
    Tensor::new(input.shape(), out)
}

/// Gradient of [`spatial_softmax`] given its output `probs`.
pub fn spatial_softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "spatial_softmax_backward";
    let [_, _, h, w] = probs.dims4(OP)?;
    if probs.shape() != grad_out.shape() {
        return Err(TensorError::shape(OP, "gradient shape differs from output"));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.values().chunks(plane).zip(grad_out.values().chunks(plane)) {
        let dot: f64 = p.iter().zip(g).map(|(&a, &b)| (a * b).as_f64()).sum();
        let dot = T::lit(dot);
        out.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(probs.shape(), out)
}

/// Probability-weighted mean pixel coordinate of each channel.
///
/// Input is a normalized `[N, K, H, W]` map; output is `[N, K, 2]` holding
/// `(x, y)` with x along the width axis. Channels with negative entries or a
/// total mass away from one are rejected.
pub fn soft_argmax<T: Scalar>(heatmaps: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "soft_argmax";
    let [n, k, h, w] = heatmaps.dims4(OP)?;
    let plane = h * w;
    let tol = 1e-6f64.max(T::epsilon().as_f64() * (plane as f64).sqrt() * 16.0);
    let mut out = Vec::with_capacity(n * k * 2);
    for (idx, ch) in heatmaps.values().chunks(plane).enumerate() {
        let mut mass = 0.0;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, v) in ch.iter().enumerate() {
            let p = v.as_f64();
            if p < 0.0 || !p.is_finite() {
                return Err(TensorError::invalid(
                    OP,
                    format!("channel {idx} has a negative or non-finite entry"),
                ));
            }
            mass += p;
            sx += p * (i % w) as f64;
            sy += p * (i / w) as f64;
        }
        if (mass - 1.0).abs() > tol {
            return Err(TensorError::invalid(
                OP,
                format!("channel {idx} sums to {mass}, expected 1"),
            ));
        }
        out.push(T::lit(sx));
        out.push(T::lit(sy));
    }
    Tensor::new(&[n, k, 2], out)
}

/// Gradient of [`soft_argmax`] with respect to the heatmap entries.
pub fn soft_argmax_backward<T: Scalar>(heat_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "soft_argmax_backward";
    let (n, k, h, w) = match *heat_shape {
        [n, k, h, w] => (n, k, h, w),
        [k, h, w] => (1, k, h, w),
        _ => return Err(TensorError::shape(OP, "heatmaps must be 3-D or 4-D")),
    };
    if grad_out.len() != n * k * 2 {
        return Err(TensorError::shape(OP, "gradient must have N*K*2 entries"));
    }
    let g = grad_out.values();
    let mut out = Vec::with_capacity(n * k * h * w);
    for idx in 0..n * k {
        let (gx, gy) = (g[2 * idx], g[2 * idx + 1]);
        for y in 0..h {
            for x in 0..w {
                out.push(gx * T::lit(x as f64) + gy * T::lit(y as f64));
            }
        }
    }
    Tensor::new(heat_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::<f64>::new(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.values(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let g = upsample2x_backward(&Tensor::full(&[1, 1, 2, 4], 1.0)).unwrap();
        assert_eq!(g.values(), &[4.0, 4.0]);
    }

    #[test]
    fn uniform_softmax_is_flat() {
        let x = Tensor::<f64>::full(&[1, 2, 5, 4], 3.0);
        let p = spatial_softmax(&x).unwrap();
        assert!(p.values().iter().all(|&v| (v - 1.0 / 20.0).abs() < 1e-15));
    }

    #[test]
    fn soft_argmax_of_one_hot_and_uniform() {
        let mut hm = Tensor::<f64>::zeros(&[1, 1, 80, 80]);
        hm.values_mut()[20 * 80 + 10] = 1.0;
        assert_eq!(soft_argmax(&hm).unwrap().values(), &[10.0, 20.0]);

        let uni = Tensor::<f64>::full(&[1, 1, 80, 80], 1.0 / 6400.0);
        let c = soft_argmax(&uni).unwrap();
        assert!((c.values()[0] - 39.5).abs() < 1e-9 && (c.values()[1] - 39.5).abs() < 1e-9);
    }

    #[test]
    fn soft_argmax_rejects_unnormalized() {
        let hm = Tensor::<f64>::full(&[1, 1, 4, 4], 0.1);
        assert!(matches!(soft_argmax(&hm), Err(TensorError::InvalidArgument { .. })));
    }
}
