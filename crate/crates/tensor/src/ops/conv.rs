//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Samples are processed in chunks so the column buffer stays below
//! [`COL_BUDGET`] elements regardless of batch size.

use crate::error::{Result, TensorError};
use crate::{Scalar, Tensor};

const COL_BUDGET: usize = 1 << 22;

/// Sliding-window geometry of a convolution from an `in_h x in_w` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        op: &'static str,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(TensorError::invalid(op, "kernel and stride must be >= 1"));
        }
        if in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
            return Err(TensorError::shape(
                op,
                format!("padded input {in_h}x{in_w} (pad {padding}) smaller than kernel {kernel}"),
            ));
        }
        Ok(Self {
            in_h,
            in_w,
            kernel,
            stride,
            padding,
            out_h: (in_h + 2 * padding - kernel) / stride + 1,
            out_w: (in_w + 2 * padding - kernel) / stride + 1,
        })
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output spatial size of a convolution: `floor((n + 2p - k) / s) + 1`.
pub fn conv_output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || n + 2 * padding < kernel {
        return None;
    }
    Some((n + 2 * padding - kernel) / stride + 1)
}

/// Output columns `ox` whose input column `ox * stride + kj - padding` lies
/// inside the plane.
fn valid_span(g: &ConvGeometry, kj: usize) -> (usize, usize) {
    let s = g.stride;
    let lo = g.padding.saturating_sub(kj).div_ceil(s);
    let hi = if g.in_w + g.padding > kj {
        ((g.in_w - 1 + g.padding - kj) / s + 1).min(g.out_w)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unrolls `channels` planes of one sample into rows of `cols`, whose rows are
/// `row_len` long; this sample occupies columns `col_offset..col_offset + P`.
fn im2col<T: Scalar>(x: &[T], channels: usize, g: &ConvGeometry, cols: &mut [T], row_len: usize, col_offset: usize) {
    let k = g.kernel;
    let plane = g.in_h * g.in_w;
    for c in 0..channels {
        let xc = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_span(g, kj);
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * row_len + col_offset..][..g.positions()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (i, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[start + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column entries back and accumulates into `x`.
fn col2im<T: Scalar>(cols: &[T], channels: usize, g: &ConvGeometry, row_len: usize, col_offset: usize, x: &mut [T]) {
    let k = g.kernel;
    let plane = g.in_h * g.in_w;
    for c in 0..channels {
        let xc = &mut x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let (lo, hi) = valid_span(g, kj);
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * row_len + col_offset..][..g.positions()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize || lo >= hi {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    let start = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        for (d, &v) in dst[start..start + line.len()].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (i, &v) in line.iter().enumerate() {
                            let d = &mut dst[start + i * g.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// `[nb][rows][p]` (sample-major) to `[rows][nb * p]` (row-major across samples).
fn interleave<T: Scalar>(src: &[T], nb: usize, rows: usize, p: usize, dst: &mut [T]) {
    for s in 0..nb {
        for r in 0..rows {
            dst[r * nb * p + s * p..][..p].copy_from_slice(&src[(s * rows + r) * p..][..p]);
        }
    }
}

fn deinterleave<T: Scalar>(src: &[T], nb: usize, rows: usize, p: usize, dst: &mut [T]) {
    for s in 0..nb {
        for r in 0..rows {
            dst[(s * rows + r) * p..][..p].copy_from_slice(&src[r * nb * p + s * p..][..p]);
        }
    }
}

fn chunk_len(per_sample: usize) -> usize {
    (COL_BUDGET / per_sample.max(1)).max(1)
}

fn output_shape(input: &Tensor<impl Scalar>, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.shape().len() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

fn check_weight<T: Scalar>(
    op: &'static str,
    weight: &Tensor<T>,
    in_channels: usize,
    transposed: bool,
) -> Result<(usize, usize)> {
    let [a, b, kh, kw] = match *weight.shape() {
        [a, b, kh, kw] => [a, b, kh, kw],
        _ => {
            return Err(TensorError::shape(
                op,
                format!("weight must be 4-D, got {:?}", weight.shape()),
            ))
        }
    };
    if kh != kw {
        return Err(TensorError::shape(op, "only square kernels are supported"));
    }
    // conv: [C_out, C_in, k, k]; transposed: [C_in, C_out, k, k]
    let (c_in, c_out) = if transposed { (a, b) } else { (b, a) };
    if c_in != in_channels {
        return Err(TensorError::shape(
            op,
            format!(
                "input has {in_channels} channels but weight {:?} expects {c_in}",
                weight.shape()
            ),
        ));
    }
    Ok((c_out, kh))
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != c_out => Err(TensorError::shape(
            op,
            format!("bias has {} entries, expected {c_out}", b.len()),
        )),
        _ => Ok(()),
    }
}

/// Cross-correlation of the zero-padded input with `weight`, plus `bias`.
///
/// `input` is `[N, C_in, H, W]` or `[C_in, H, W]`, `weight` is
/// `[C_out, C_in, k, k]`. The output keeps the input's rank.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    let [n, c_in, h, w] = input.dims4(OP)?;
    let (c_out, k) = check_weight(OP, weight, c_in, false)?;
    check_bias(OP, bias, c_out)?;
    let g = ConvGeometry::new(OP, h, w, k, stride, padding)?;
    let p = g.positions();
    let ckk = c_in * k * k;
    let x = input.values();
    let mut out = vec![T::zero(); n * c_out * p];

    let chunk = chunk_len(ckk * p);
    let mut cols = Vec::new();
    let mut tmp = Vec::new();
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let row_len = nb * p;
        let xs = &x[s0 * c_in * h * w..(s0 + nb) * c_in * h * w];
        let col_view: &[T] = if g.is_pointwise() && nb == 1 {
            xs
        } else {
            cols.resize(ckk * row_len, T::zero());
            if g.is_pointwise() {
                interleave(xs, nb, c_in, p, &mut cols);
            } else {
                for s in 0..nb {
                    im2col(&xs[s * c_in * h * w..], c_in, &g, &mut cols, row_len, s * p);
                }
            }
            &cols
        };
        let dst = &mut out[s0 * c_out * p..(s0 + nb) * c_out * p];
        if nb == 1 {
            T::gemm(c_out, ckk, p, weight.values(), false, col_view, false, dst, T::zero());
        } else {
            tmp.resize(c_out * row_len, T::zero());
            T::gemm(
                c_out,
                ckk,
                row_len,
                weight.values(),
                false,
                col_view,
                false,
                &mut tmp,
                T::zero(),
            );
            deinterleave(&tmp, nb, c_out, p, dst);
        }
        s0 += nb;
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.values(), p);
    }
    Tensor::new(&output_shape(input, n, c_out, g.out_h, g.out_w), out)
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    let c = bias.len();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % c];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn channel_sums<T: Scalar>(grad: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for (i, chunk) in grad.chunks(plane).enumerate() {
        sums[i % channels] = sums[i % channels] + chunk.iter().copied().sum::<T>();
    }
    sums
}

/// Forward inputs retained for [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct Conv2dCtx<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Exact gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(ctx: &Conv2dCtx<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    const OP: &str = "conv2d_backward";
    let [n, c_in, h, w] = ctx.input.dims4(OP)?;
    let (c_out, k) = check_weight(OP, &ctx.weight, c_in, false)?;
    let g = ConvGeometry::new(OP, h, w, k, ctx.stride, ctx.padding)?;
    let p = g.positions();
    let [gn, gc, gh, gw] = grad_out.dims4(OP)?;
    if [gn, gc, gh, gw] != [n, c_out, g.out_h, g.out_w] {
        return Err(TensorError::shape(
            OP,
            format!(
                "grad_out {:?} does not match forward output [{n}, {c_out}, {}, {}]",
                grad_out.shape(),
                g.out_h,
                g.out_w
            ),
        ));
    }
    let ckk = c_in * k * k;
    let x = ctx.input.values();
    let gy = grad_out.values();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw_acc = vec![T::zero(); c_out * ckk];

    let chunk = chunk_len(ckk * p);
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    let mut gyc = Vec::new();
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let row_len = nb * p;
        let plane_in = c_in * h * w;
        let xs = &x[s0 * plane_in..(s0 + nb) * plane_in];
        cols.resize(ckk * row_len, T::zero());
        if g.is_pointwise() {
            interleave(xs, nb, c_in, p, &mut cols);
        } else {
            for s in 0..nb {
                im2col(&xs[s * plane_in..], c_in, &g, &mut cols, row_len, s * p);
            }
        }
        let gys = &gy[s0 * c_out * p..(s0 + nb) * c_out * p];
        gyc.resize(c_out * row_len, T::zero());
        interleave(gys, nb, c_out, p, &mut gyc);

        // dW += gy * cols^T
        T::gemm(c_out, row_len, ckk, &gyc, false, &cols, true, &mut gw_acc, T::one());
        // dcols = W^T * gy
        gcols.resize(ckk * row_len, T::zero());
        T::gemm(
            ckk,
            c_out,
            row_len,
            ctx.weight.values(),
            true,
            &gyc,
            false,
            &mut gcols,
            T::zero(),
        );
        let gxs = &mut gx[s0 * plane_in..(s0 + nb) * plane_in];
        if g.is_pointwise() {
            deinterleave(&gcols, nb, c_in, p, gxs);
        } else {
            for s in 0..nb {
                col2im(
                    &gcols,
                    c_in,
                    &g,
                    row_len,
                    s * p,
                    &mut gxs[s * plane_in..(s + 1) * plane_in],
                );
            }
        }
        s0 += nb;
    }
    Ok(ConvGrads {
        input: Tensor::new(ctx.input.shape(), gx)?,
        weight: Tensor::new(ctx.weight.shape(), gw_acc)?,
        bias: Tensor::new(&[c_out], channel_sums(gy, c_out, p))?,
    })
}

/// Transposed convolution (adjoint of a strided convolution).
///
/// `weight` is `[C_in, C_out, k, k]`; output size is `(H - 1) * s - 2p + k`.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "transposed_conv2d";
    let [n, c_in, h, w] = input.dims4(OP)?;
    let (c_out, k) = check_weight(OP, weight, c_in, true)?;
    check_bias(OP, bias, c_out)?;
    let g = transposed_geometry(OP, h, w, k, stride, padding)?;
    let (oh, ow) = (g.in_h, g.in_w);
    let hw = h * w;
    let cokk = c_out * k * k;
    let x = input.values();
    let mut out = vec![T::zero(); n * c_out * oh * ow];

    let chunk = chunk_len(cokk * hw);
    let mut xc = Vec::new();
    let mut cols = Vec::new();
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let row_len = nb * hw;
        xc.resize(c_in * row_len, T::zero());
        interleave(&x[s0 * c_in * hw..(s0 + nb) * c_in * hw], nb, c_in, hw, &mut xc);
        cols.resize(cokk * row_len, T::zero());
        T::gemm(
            cokk,
            c_in,
            row_len,
            weight.values(),
            true,
            &xc,
            false,
            &mut cols,
            T::zero(),
        );
        let plane_out = c_out * oh * ow;
        for s in 0..nb {
            let dst = &mut out[(s0 + s) * plane_out..(s0 + s + 1) * plane_out];
            col2im(&cols, c_out, &g, row_len, s * hw, dst);
        }
        s0 += nb;
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.values(), oh * ow);
    }
    Tensor::new(&output_shape(input, n, c_out, oh, ow), out)
}

fn transposed_geometry(
    op: &'static str,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    if stride == 0 || k == 0 {
        return Err(TensorError::invalid(op, "kernel and stride must be >= 1"));
    }
    let full_h = (h - 1) * stride + k;
    let full_w = (w - 1) * stride + k;
    if full_h <= 2 * padding || full_w <= 2 * padding {
        return Err(TensorError::shape(op, "padding larger than the output"));
    }
    let g = ConvGeometry::new(op, full_h - 2 * padding, full_w - 2 * padding, k, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok(g)
}

/// Gradients of [`transposed_conv2d`]; `ctx.weight` is `[C_in, C_out, k, k]`.
pub fn transposed_conv2d_backward<T: Scalar>(ctx: &Conv2dCtx<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    const OP: &str = "transposed_conv2d_backward";
    let [n, c_in, h, w] = ctx.input.dims4(OP)?;
    let (c_out, k) = check_weight(OP, &ctx.weight, c_in, true)?;
    let g = transposed_geometry(OP, h, w, k, ctx.stride, ctx.padding)?;
    let (oh, ow) = (g.in_h, g.in_w);
    let [gn, gc, gh, gw] = grad_out.dims4(OP)?;
    if [gn, gc, gh, gw] != [n, c_out, oh, ow] {
        return Err(TensorError::shape(
            OP,
            format!("grad_out {:?} does not match forward output", grad_out.shape()),
        ));
    }
    let hw = h * w;
    let cokk = c_out * k * k;
    let x = ctx.input.values();
    let gy = grad_out.values();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw_acc = vec![T::zero(); c_in * cokk];

    let chunk = chunk_len(cokk * hw);
    let mut xc = Vec::new();
    let mut cols = Vec::new();
    let mut gxc = Vec::new();
    let mut s0 = 0;
    while s0 < n {
        let nb = chunk.min(n - s0);
        let row_len = nb * hw;
        let plane_out = c_out * oh * ow;
        cols.resize(cokk * row_len, T::zero());
        for s in 0..nb {
            im2col(&gy[(s0 + s) * plane_out..], c_out, &g, &mut cols, row_len, s * hw);
        }
        xc.resize(c_in * row_len, T::zero());
        interleave(&x[s0 * c_in * hw..(s0 + nb) * c_in * hw], nb, c_in, hw, &mut xc);
        // dW[C_in, CoKK] += x * cols^T
        T::gemm(c_in, row_len, cokk, &xc, false, &cols, true, &mut gw_acc, T::one());
        // dx = W * cols
        gxc.resize(c_in * row_len, T::zero());
        T::gemm(
            c_in,
            cokk,
            row_len,
            ctx.weight.values(),
            false,
            &cols,
            false,
            &mut gxc,
            T::zero(),
        );
        deinterleave(&gxc, nb, c_in, hw, &mut gx[s0 * c_in * hw..(s0 + nb) * c_in * hw]);
        s0 += nb;
    }
    Ok(ConvGrads {
        input: Tensor::new(ctx.input.shape(), gx)?,
        weight: Tensor::new(ctx.weight.shape(), gw_acc)?,
        bias: Tensor::new(&[c_out], channel_sums(gy, c_out, oh * ow))?,
    })
}
