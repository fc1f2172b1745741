use conekp_tensor::ops;
use conekp_tensor::{Mode, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct nested-loop cross-correlation over a zero-padded single sample.
fn conv_oracle(
    x: &[f64],
    (c_in, h, w): (usize, usize, usize),
    wt: &[f64],
    (c_out, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for ki in 0..k {
                        for kj in 0..k {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc +=
                                    x[(c * h + iy as usize) * w + ix as usize] * wt[((o * c_in + c) * k + ki) * k + kj];
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = Tensor::<f64>::uniform(&[1, 5, 5], 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[2, 1, 3, 3], 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[2], 1.0, &mut rng);
    let y = ops::conv2d(&x, &w, Some(&b), 2, 1).unwrap();
    assert_eq!(y.shape(), &[2, 3, 3]);
    let expected = conv_oracle(x.values(), (1, 5, 5), w.values(), (2, 3), b.values(), 2, 1);
    for (a, e) in y.values().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
}

/// Kernel wider than the input: some taps see only padding.
#[test]
fn kernel_wider_than_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (h, w, k, stride, pad) in [(1, 1, 5, 1, 2), (1, 3, 5, 2, 2), (2, 1, 4, 1, 3)] {
        let x = Tensor::<f64>::uniform(&[1, 2, h, w], 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&[3, 2, k, k], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[3], 1.0, &mut rng);
        let y = ops::conv2d(&x, &wt, Some(&b), stride, pad).unwrap();
        let expected = conv_oracle(x.values(), (2, h, w), wt.values(), (3, k), b.values(), stride, pad);
        assert_eq!(y.len(), expected.len());
        for (a, e) in y.values().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn batched_conv_matches_oracle_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::<f64>::uniform(&[3, 2, 7, 6], 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[4, 2, 3, 3], 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[4], 1.0, &mut rng);
    let y = ops::conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    for s in 0..3 {
        let xs = x.index_outer(s);
        let expected = conv_oracle(xs.values(), (2, 7, 6), w.values(), (4, 3), b.values(), 1, 1);
        let got = y.index_outer(s);
        for (a, e) in got.values().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn conv2d_matches_oracle_for_any_geometry(
        seed in any::<u64>(), h in 1usize..10, w in 1usize..10, k in 1usize..5, stride in 1usize..4, pad in 0usize..4,
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[2, 2, h, w], 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&[3, 2, k, k], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[3], 1.0, &mut rng);
        let y = ops::conv2d(&x, &wt, Some(&b), stride, pad).unwrap();
        for s in 0..2 {
            let expected = conv_oracle(x.index_outer(s).values(), (2, h, w), wt.values(), (3, k), b.values(), stride, pad);
            for (a, e) in y.index_outer(s).values().iter().zip(&expected) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_output_shape_formula(h in 1usize..24, w in 1usize..24, k in 1usize..6, stride in 1usize..4, pad in 0usize..3) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let x = Tensor::<f32>::zeros(&[1, 2, h, w]);
        let wt = Tensor::<f32>::zeros(&[3, 2, k, k]);
        let y = ops::conv2d(&x, &wt, None, stride, pad).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]);
    }

    #[test]
    fn softmax_channels_sum_to_one(seed in any::<u64>(), c in 1usize..4, h in 1usize..12, w in 1usize..12, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[2, c, h, w], scale, &mut rng);
        let p = ops::spatial_softmax(&x).unwrap();
        for ch in p.values().chunks(h * w) {
            prop_assert!((ch.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(ch.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn soft_argmax_stays_in_pixel_hull(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[1, 3, h, w], 20.0, &mut rng);
        let c = ops::soft_argmax(&ops::spatial_softmax(&x).unwrap()).unwrap();
        for xy in c.values().chunks(2) {
            prop_assert!(xy[0] >= 0.0 && xy[0] <= (w - 1) as f64 + 1e-9);
            prop_assert!(xy[1] >= 0.0 && xy[1] <= (h - 1) as f64 + 1e-9);
        }
    }
}

#[test]
fn same_seed_dropout_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = Tensor::<f32>::uniform(&[4, 8, 10, 10], 1.0, &mut rng);
    let a = ops::dropout(&x, 0.3, Mode::Train, 123).unwrap();
    let b = ops::dropout(&x, 0.3, Mode::Train, 123).unwrap();
    assert_eq!(a.0.values(), b.0.values());
    assert_eq!(a.1, b.1);
}
