use crate::error::{Result, TensorError};
use crate::{Scalar, Tensor};

/// `y = x W^T + b` with `x: [N, F]`, `W: [O, F]`, `b: [O]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, o) = check("linear", input, weight)?;
    if bias.len() != o {
        return Err(TensorError::shape(
            "linear",
            format!("bias has {} entries, expected {o}", bias.len()),
        ));
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(bias.values());
    }
    T::gemm(
        n,
        f,
        o,
        input.values(),
        false,
        weight.values(),
        true,
        &mut out,
        T::one(),
    );
    Tensor::new(&[n, o], out)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, f, o) = check("linear_backward", input, weight)?;
    if grad_out.shape() != [n, o] {
        return Err(TensorError::shape(
            "linear_backward",
            format!("grad_out {:?}, expected [{n}, {o}]", grad_out.shape()),
        ));
    }
    let gy = grad_out.values();
    let mut gx = vec![T::zero(); n * f];
    T::gemm(n, o, f, gy, false, weight.values(), false, &mut gx, T::zero());
    let mut gw = vec![T::zero(); o * f];
    T::gemm(o, n, f, gy, true, input.values(), false, &mut gw, T::zero());
    let mut gb = vec![T::zero(); o];
    for row in gy.chunks(o) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(input.shape(), gx)?,
        weight: Tensor::new(weight.shape(), gw)?,
        bias: Tensor::new(&[o], gb)?,
    })
}

fn check<T: Scalar>(op: &'static str, input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (input.shape(), weight.shape()) {
        (&[n, f], &[o, wf]) if f == wf => Ok((n, f, o)),
        (a, b) => Err(TensorError::shape(
            op,
            format!("input {a:?} incompatible with weight {b:?}"),
        )),
    }
}
