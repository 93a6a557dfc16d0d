//! Fully connected layers: `y = x W + b` with `W` stored as `[n, k]`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn rows_and_width<T: Real>(input: &Tensor<T>, context: &'static str) -> Result<(usize, usize, bool)> {
    match *input.shape() {
        [n] => Ok((1, n, false)),
        [b, n] => Ok((b, n, true)),
        ref other => Err(Error::shape(
            context,
            format!("expected [n] or [B, n] input, got {other:?}"),
        )),
    }
}

fn check_weights<T: Real>(weights: &Tensor<T>, width: usize, context: &'static str) -> Result<usize> {
    match *weights.shape() {
        [n, k] if n == width => Ok(k),
        [n, _] => Err(Error::shape(
            context,
            format!("input width is {width} but weights expect {n} inputs"),
        )),
        ref other => Err(Error::shape(
            context,
            format!("weights must be [n, k], got {other:?}"),
        )),
    }
}

/// Affine map of a vector `[n]` or a batch `[B, n]`.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    const CTX: &str = "dense_forward";
    let (rows, width, batched) = rows_and_width(input, CTX)?;
    let k = check_weights(weights, width, CTX)?;
    bias.expect_shape(&[k], CTX, "bias")?;
    let mut out = if batched {
        Tensor::zeros(&[rows, k])
    } else {
        Tensor::zeros(&[k])
    };
    for r in 0..rows {
        out.data_mut()[r * k..(r + 1) * k].copy_from_slice(bias.data());
    }
    T::gemm(
        rows,
        width,
        k,
        T::one(),
        input.data(),
        false,
        weights.data(),
        false,
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    const CTX: &str = "dense_backward";
    let (rows, width, batched) = rows_and_width(cached_input, CTX)?;
    let k = check_weights(weights, width, CTX)?;
    let expected: Vec<usize> = if batched { vec![rows, k] } else { vec![k] };
    grad_out.expect_shape(&expected, CTX, "grad_out")?;

    let mut grad_input = cached_input.zeros_like();
    T::gemm(
        rows,
        k,
        width,
        T::one(),
        grad_out.data(),
        false,
        weights.data(),
        true,
        T::zero(),
        grad_input.data_mut(),
    );
    let mut grad_w = weights.zeros_like();
    T::gemm(
        width,
        rows,
        k,
        T::one(),
        cached_input.data(),
        true,
        grad_out.data(),
        false,
        T::zero(),
        grad_w.data_mut(),
    );
    let mut grad_b = Tensor::zeros(&[k]);
    for r in 0..rows {
        for (acc, &g) in grad_b.data_mut().iter_mut().zip(&grad_out.data()[r * k..(r + 1) * k]) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}
