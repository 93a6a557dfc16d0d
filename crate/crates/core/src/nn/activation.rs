//! Elementwise and row-wise nonlinearities. Backward passes take the forward
//! *output*, which is all any of these need.

use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(grad: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_same_shape(output, "relu_backward")?;
    let mut g = grad.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

/// Logistic function, kept strictly inside `(0, 1)` even where the exact
/// value rounds to an endpoint.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(T::one() - T::epsilon())
}

pub fn sigmoid<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Real>(grad: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_same_shape(output, "sigmoid_backward")?;
    let mut g = grad.clone();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= s * (T::one() - s);
    }
    Ok(g)
}

fn rows<T: Real>(t: &Tensor<T>) -> usize {
    if t.rank() <= 1 {
        1
    } else {
        t.shape()[0]
    }
}

/// Softmax over the last axis of a vector or a `[B, k]` batch.
pub fn softmax<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = t.clone();
    for r in 0..rows(t) {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// `log(softmax(t))` computed with the log-sum-exp shift.
pub fn log_softmax<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = t.clone();
    for r in 0..rows(t) {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    out
}

/// Vector-Jacobian product of softmax: `y * (g - <g, y>)` per row.
pub fn softmax_backward<T: Real>(grad: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad.expect_same_shape(output, "softmax_backward")?;
    let mut g = grad.clone();
    for r in 0..rows(output) {
        let y = output.row(r);
        let gr = g.row_mut(r);
        let inner: T = gr.iter().zip(y).map(|(&a, &b)| a * b).sum();
        for (gv, &yv) in gr.iter_mut().zip(y) {
            *gv = yv * (*gv - inner);
        }
    }
    Ok(g)
}
