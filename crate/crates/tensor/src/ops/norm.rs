use crate::error::{Result, TensorError};
use crate::{Mode, Scalar, Tensor};

/// Running statistics and hyper-parameters of a 2-D batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Values retained from a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCtx<T> {
    /// Normalized input `x_hat`, same shape as the input.
    pub normalized: Vec<T>,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<T>,
    pub gamma: Vec<T>,
    pub mode: Mode,
    pub dims: [usize; 4],
    pub shape: Vec<usize>,
}

/// Batch normalization over `[N, C, H, W]`.
///
/// Train mode normalizes by the (biased) batch statistics and folds them into
/// the running estimates; eval mode uses the running estimates.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    const OP: &str = "batchnorm";
    let [n, c, h, w] = input.dims4(OP)?;
    if gamma.len() != c || beta.len() != c || state.running_mean.len() != c {
        return Err(TensorError::shape(
            OP,
            format!("{c} channels but gamma/beta have {}/{}", gamma.len(), beta.len()),
        ));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.values();
    let eps = state.epsilon;

    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += x[(b * c + ch) * plane..][..plane]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += x[(b * c + ch) * plane..][..plane]
                        .iter()
                        .map(|v| (v.as_f64() - mu).powi(2))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = ss / count as f64;
            }
            let m = state.momentum;
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for ch in 0..c {
                let rm = &mut state.running_mean.values_mut()[ch];
                *rm = T::lit((1.0 - m) * rm.as_f64() + m * mean[ch]);
                let rv = &mut state.running_var.values_mut()[ch];
                *rv = T::lit((1.0 - m) * rv.as_f64() + m * var[ch] * unbias);
            }
            (mean, var)
        }
        Mode::Eval => (
            state.running_mean.values().iter().map(|v| v.as_f64()).collect(),
            state.running_var.values().iter().map(|v| v.as_f64()).collect(),
        ),
    };

    let inv_std: Vec<T> = var.iter().map(|v| T::lit(1.0 / (v + eps).sqrt())).collect();
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let mu = T::lit(mean[ch]);
            let (g, bt, is) = (gamma.values()[ch], beta.values()[ch], inv_std[ch]);
            for i in off..off + plane {
                let xh = (x[i] - mu) * is;
                normalized[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    let ctx = BatchNormCtx {
        normalized,
        inv_std,
        gamma: gamma.values().to_vec(),
        mode,
        dims: [n, c, h, w],
        shape: input.shape().to_vec(),
    };
    Ok((Tensor::new(input.shape(), out)?, ctx))
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Scalar>(ctx: &BatchNormCtx<T>, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>> {
    const OP: &str = "batchnorm_backward";
    if grad_out.shape() != ctx.shape.as_slice() {
        return Err(TensorError::shape(
            OP,
            format!("grad_out {:?} vs input {:?}", grad_out.shape(), ctx.shape),
        ));
    }
    let [n, c, h, w] = ctx.dims;
    let plane = h * w;
    let count = (n * plane) as f64;
    let gy = grad_out.values();
    let xh = &ctx.normalized;
    let mut d_gamma = vec![0.0f64; c];
    let mut d_beta = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                d_beta[ch] += gy[i].as_f64();
                d_gamma[ch] += (gy[i] * xh[i]).as_f64();
            }
        }
    }
    let mut gx = vec![T::zero(); gy.len()];
    for ch in 0..c {
        let scale = ctx.gamma[ch] * ctx.inv_std[ch];
        let (mean_gy, mean_gy_xh) = match ctx.mode {
            Mode::Train => (T::lit(d_beta[ch] / count), T::lit(d_gamma[ch] / count)),
            Mode::Eval => (T::zero(), T::zero()),
        };
        for b in 0..n {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                gx[i] = scale * (gy[i] - mean_gy - xh[i] * mean_gy_xh);
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(&ctx.shape, gx)?,
        gamma: Tensor::new(&[c], d_gamma.into_iter().map(T::lit).collect())?,
        beta: Tensor::new(&[c], d_beta.into_iter().map(T::lit).collect())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_zero() {
        let x = Tensor::<f64>::full(&[2, 1, 3, 3], 4.2);
        let mut st = BatchNormState::new(1);
        let (y, _) = batchnorm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut st, Mode::Train).unwrap();
        assert!(y.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[3, 2, 2, 2], 5.0, &mut rng);
        let beta = Tensor::new(&[2], vec![0.7, -1.3]).unwrap();
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm(&x, &Tensor::zeros(&[2]), &beta, &mut st, Mode::Train).unwrap();
        for (i, v) in y.values().iter().enumerate() {
            let ch = (i / 4) % 2;
            assert_eq!(*v, beta.values()[ch]);
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Wide spread so eps/(var + eps) stays far below the 1e-6 tolerance.
        let x = Tensor::<f64>::from_fn(&[4, 2, 3, 3], |_| rng.random_range(-10.0..10.0));
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut st, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.values()[(b * 2 + ch) * 9..][..9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 1, 2], |i| i as f64); // 0,1,2,3
        let mut st = BatchNormState::new(1);
        batchnorm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut st, Mode::Train).unwrap();
        assert!((st.running_mean.values()[0] - 0.15).abs() < 1e-12);
        // unbiased batch variance 5/3
        assert!((st.running_var.values()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
