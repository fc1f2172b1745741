//! Central finite-difference checks of the backward kernels in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, BatchNormState, Conv2dCtx};
use crate::{Mode, Result, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central-difference gradient of `loss` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut loss: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.values_mut()[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.values_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Worst relative error seen for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

struct Acc(Vec<LayerCheck>);

impl Acc {
    fn record(&mut self, layer: &'static str, analytic: &[f64], numeric: &[f64]) {
        let e = rel_err(analytic, numeric);
        match self.0.iter_mut().find(|c| c.layer == layer) {
            Some(c) => c.max_rel_err = c.max_rel_err.max(e),
            None => self.0.push(LayerCheck {
                layer,
                shapes: 0,
                max_rel_err: e,
            }),
        }
    }

    fn shape_done(&mut self, layers: &[&'static str]) {
        for c in self.0.iter_mut().filter(|c| layers.contains(&c.layer)) {
            c.shapes += 1;
        }
    }
}

/// Checks every backward kernel on `shapes` random shapes each, comparing
/// with a scalar projection `<f(x), r>` for random `r`.
pub fn layer_suite(shapes: usize, seed: u64) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Acc(Vec::new());

    for _ in 0..shapes {
        let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let k = [1, 3][rng.random_range(0..2)];
        let (stride, pad) = (rng.random_range(1..3), rng.random_range(0..2));
        let (h, w) = (rng.random_range(k.max(3)..7), rng.random_range(k.max(3)..7));
        let x = random(&[n, ci, h, w], &mut rng);
        let wt = random(&[co, ci, k, k], &mut rng);
        let b = random(&[co], &mut rng);
        let r = random(ops::conv2d(&x, &wt, Some(&b), stride, pad)?.shape(), &mut rng);
        let ctx = Conv2dCtx {
            input: x.clone(),
            weight: wt.clone(),
            stride,
            padding: pad,
        };
        let g = ops::conv2d_backward(&ctx, &r)?;
        let f = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
            dot(&ops::conv2d(x, wt, Some(b), stride, pad).expect("shapes fixed"), &r)
        };
        acc.record("conv2d", g.input.values(), &numeric_grad(&x, |x| f(x, &wt, &b)));
        acc.record("conv2d", g.weight.values(), &numeric_grad(&wt, |wt| f(&x, wt, &b)));
        acc.record("conv2d", g.bias.values(), &numeric_grad(&b, |b| f(&x, &wt, b)));
        acc.shape_done(&["conv2d"]);
    }

    let mut done = 0;
    while done < shapes {
        let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (k, stride, pad) = [(4, 2, 1), (3, 1, 1), (2, 2, 0), (3, 2, 1)][rng.random_range(0..4)];
        let (h, w) = (rng.random_range(2..5), rng.random_range(2..5));
        let x = random(&[n, ci, h, w], &mut rng);
        let wt = random(&[ci, co, k, k], &mut rng);
        let b = random(&[co], &mut rng);
        let Ok(y) = ops::transposed_conv2d(&x, &wt, Some(&b), stride, pad) else {
            continue;
        };
        let r = random(y.shape(), &mut rng);
        let ctx = Conv2dCtx {
            input: x.clone(),
            weight: wt.clone(),
            stride,
            padding: pad,
        };
        let g = ops::transposed_conv2d_backward(&ctx, &r)?;
        let f = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
            dot(
                &ops::transposed_conv2d(x, wt, Some(b), stride, pad).expect("shapes fixed"),
                &r,
            )
        };
        acc.record(
            "transposed_conv2d",
            g.input.values(),
            &numeric_grad(&x, |x| f(x, &wt, &b)),
        );
        acc.record(
            "transposed_conv2d",
            g.weight.values(),
            &numeric_grad(&wt, |wt| f(&x, wt, &b)),
        );
        acc.record(
            "transposed_conv2d",
            g.bias.values(),
            &numeric_grad(&b, |b| f(&x, &wt, b)),
        );
        acc.shape_done(&["transposed_conv2d"]);
        done += 1;
    }

    for i in 0..shapes {
        let mode = if i % 4 == 3 { Mode::Eval } else { Mode::Train };
        let (n, c) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..4), rng.random_range(2..4));
        let x = random(&[n, c, h, w], &mut rng);
        let gamma = random(&[c], &mut rng);
        let beta = random(&[c], &mut rng);
        let mut base = BatchNormState::new(c);
        base.running_mean = random(&[c], &mut rng);
        base.running_var = Tensor::from_fn(&[c], |_| rng.random_range(0.5..2.0));
        let run = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            let mut st = base.clone();
            ops::batchnorm(x, g, b, &mut st, mode).expect("shapes fixed")
        };
        let (y, ctx) = run(&x, &gamma, &beta);
        let r = random(y.shape(), &mut rng);
        let g = ops::batchnorm_backward(&ctx, &r)?;
        acc.record(
            "batchnorm",
            g.input.values(),
            &numeric_grad(&x, |x| dot(&run(x, &gamma, &beta).0, &r)),
        );
        acc.record(
            "batchnorm",
            g.gamma.values(),
            &numeric_grad(&gamma, |gm| dot(&run(&x, gm, &beta).0, &r)),
        );
        acc.record(
            "batchnorm",
            g.beta.values(),
            &numeric_grad(&beta, |bt| dot(&run(&x, &gamma, bt).0, &r)),
        );
        acc.shape_done(&["batchnorm"]);
    }

    for i in 0..shapes {
        let shape = [
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..5),
            rng.random_range(1..5),
        ];
        // Away from the ReLU kink.
        let x = Tensor::from_fn(&shape, |_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        });
        let r = random(&shape, &mut rng);
        let g = ops::relu_backward(&ops::relu(&x), &r)?;
        acc.record("relu", g.values(), &numeric_grad(&x, |x| dot(&ops::relu(x), &r)));
        let seed = 1000 + i as u64;
        let (_, mask) = ops::dropout(&x, 0.3, Mode::Train, seed)?;
        let gd = ops::dropout_backward(&mask, &r)?;
        let nd = numeric_grad(&x, |x| {
            dot(&ops::dropout(x, 0.3, Mode::Train, seed).expect("valid").0, &r)
        });
        acc.record("dropout", gd.values(), &nd);
        acc.shape_done(&["relu", "dropout"]);
    }

    for _ in 0..shapes {
        let shape = [
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..5),
            rng.random_range(1..5),
        ];
        let x = random(&shape, &mut rng);
        let r = random(ops::upsample2x(&x)?.shape(), &mut rng);
        let g = ops::upsample2x_backward(&r)?;
        acc.record(
            "upsample2x",
            g.values(),
            &numeric_grad(&x, |x| dot(&ops::upsample2x(x).expect("valid"), &r)),
        );

        let rp = random(ops::global_avg_pool(&x)?.shape(), &mut rng);
        let gp = ops::global_avg_pool_backward(x.shape(), &rp)?;
        let np = numeric_grad(&x, |x| dot(&ops::global_avg_pool(x).expect("valid"), &rp));
        acc.record("global_avg_pool", gp.values(), &np);

        let other = random(&[shape[0], 2, shape[2], shape[3]], &mut rng);
        let rc = random(ops::concat_channels(&x, &other)?.shape(), &mut rng);
        let (ga, _) = ops::split_channels(&rc, shape[1])?;
        let nc = numeric_grad(&x, |x| dot(&ops::concat_channels(x, &other).expect("valid"), &rc));
        acc.record("concat_channels", ga.values(), &nc);
        acc.shape_done(&["upsample2x", "global_avg_pool", "concat_channels"]);
    }

    for _ in 0..shapes {
        let (n, f, o) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..5));
        let x = random(&[n, f], &mut rng);
        let w = random(&[o, f], &mut rng);
        let b = random(&[o], &mut rng);
        let r = random(&[n, o], &mut rng);
        let g = ops::linear_backward(&x, &w, &r)?;
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&ops::linear(x, w, b).expect("valid"), &r);
        acc.record("linear", g.input.values(), &numeric_grad(&x, |x| f(x, &w, &b)));
        acc.record("linear", g.weight.values(), &numeric_grad(&w, |w| f(&x, w, &b)));
        acc.record("linear", g.bias.values(), &numeric_grad(&b, |b| f(&x, &w, b)));
        acc.shape_done(&["linear"]);
    }

    for _ in 0..shapes {
        let shape = [
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(2..6),
            rng.random_range(2..6),
        ];
        let x = Tensor::<f64>::uniform(&shape, 2.0, &mut rng);
        let p = ops::spatial_softmax(&x)?;
        let r = random(p.shape(), &mut rng);
        let g = ops::spatial_softmax_backward(&p, &r)?;
        let ns = numeric_grad(&x, |x| dot(&ops::spatial_softmax(x).expect("valid"), &r));
        acc.record("spatial_softmax", g.values(), &ns);

        let rc = random(ops::soft_argmax(&p)?.shape(), &mut rng);
        let gh = ops::soft_argmax_backward(p.shape(), &rc)?;
        let gx = ops::spatial_softmax_backward(&p, &gh)?;
        let nx = numeric_grad(&x, |x| {
            dot(
                &ops::soft_argmax(&ops::spatial_softmax(x).expect("valid")).expect("valid"),
                &rc,
            )
        });
        acc.record("soft_argmax", gx.values(), &nx);
        acc.shape_done(&["spatial_softmax", "soft_argmax"]);
    }

    Ok(acc.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_layer() {
        let checks = layer_suite(2, 1).unwrap();
        assert_eq!(checks.len(), 11);
        for c in &checks {
            assert_eq!(c.shapes, 2, "{}", c.layer);
            assert!(c.max_rel_err < 1e-4, "{c:?}");
        }
    }
}
