//! Primitive operations and their backward rules.
//!
//! Matrices use the row-vector convention `y = x · W`, with `W` stored as
//! `in × out`. The slice kernels at the bottom are what the model calls in
//! its inner loops; the tensor-level functions wrap them with shape checks.

use rand::Rng;

use super::Tensor;
use crate::error::{Result, StarError};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> StarError {
    StarError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.expect_matrix("matmul")?;
    let (k2, c) = b.expect_matrix("matmul")?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        vec_mat(a.row(i), b.data(), c, out.row_mut(i));
    }
    Ok(out)
}

/// Gradients of `a · b` with respect to `a` and `b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (r, _) = a.expect_matrix("matmul_backward")?;
    let (_, c) = b.expect_matrix("matmul_backward")?;
    if grad.shape() != [r, c] {
        return Err(mismatch("matmul_backward", a, grad));
    }
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..r {
        mat_vec_acc(b.data(), c, grad.row(i), ga.row_mut(i));
        outer_acc(a.row(i), grad.row(i), gb.data_mut());
    }
    Ok((ga, gb))
}

/// Adds `bias` to every row of `x`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if bias.shape().len() != 1 || bias.len() != x.cols() {
        return Err(mismatch("add_bias", x, bias));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        add_assign(out.row_mut(i), bias.data());
    }
    Ok(out)
}

/// Returns `(grad_x, grad_bias)`.
pub fn add_bias_backward(grad: &Tensor) -> (Tensor, Tensor) {
    let mut gb = Tensor::zeros(&[grad.cols()]);
    for i in 0..grad.rows() {
        add_assign(gb.data_mut(), grad.row(i));
    }
    (grad.clone(), gb)
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch("elementwise_mul", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn elementwise_mul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((elementwise_mul(grad, b)?, elementwise_mul(grad, a)?))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

/// Backward rule expressed in terms of the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    zip_map("sigmoid_backward", y, grad, |y, g| g * y * (1.0 - y))
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

pub fn tanh_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    zip_map("tanh_backward", y, grad, |y, g| g * (1.0 - y * y))
}

/// Softmax along the trailing axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if y.shape() != grad.shape() {
        return Err(mismatch("softmax_backward", y, grad));
    }
    let mut out = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        softmax_backward_into(y.row(i), grad.row(i), out.row_mut(i));
    }
    Ok(out)
}

/// Concatenates vectors end to end.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let mut data = Vec::new();
    for p in parts {
        if p.shape().len() != 1 {
            return Err(mismatch("concat", parts[0], p));
        }
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::vector(data))
}

/// Splits a gradient of `concat(parts)` back into per-part gradients.
pub fn concat_backward(lengths: &[usize], grad: &Tensor) -> Result<Vec<Tensor>> {
    if lengths.iter().sum::<usize>() != grad.len() {
        return Err(StarError::ShapeMismatch {
            op: "concat_backward",
            left: lengths.to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    let mut offset = 0;
    Ok(lengths
        .iter()
        .map(|&n| {
            let t = Tensor::vector(grad.data()[offset..offset + n].to_vec());
            offset += n;
            t
        })
        .collect())
}

pub fn mean(x: &Tensor) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.data().iter().sum::<f64>() / x.len() as f64
}

pub fn mean_backward(x: &Tensor, grad: f64) -> Tensor {
    Tensor::filled(x.shape(), grad / x.len().max(1) as f64)
}

/// Inverted dropout. Returns the output and the multiplicative mask, which
/// is also the backward rule (`grad_x = grad ⊙ mask`).
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, train: bool, rng: &mut R) -> (Tensor, Tensor) {
    let mask = if train {
        Tensor::from_vec(x.shape(), dropout_mask(x.len(), rate, rng)).expect("mask length")
    } else {
        Tensor::filled(x.shape(), 1.0)
    };
    let out = elementwise_mul(x, &mask).expect("same shape");
    (out, mask)
}

/// Mask entries are `0` with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same length")
}

fn zip_map(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

// ---- slice kernels ----

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
/// Four running sums, combined in a fixed order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[inline]
pub fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// `out = x · W` where `W` is `x.len() × cols`, row-major.
pub fn vec_mat(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    out.fill(0.0);
    vec_mat_acc(x, w, cols, out);
}

/// `out += x · W`.
pub fn vec_mat_acc(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), x.len() * cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        axpy(out, xi, &w[i * cols..(i + 1) * cols]);
    }
}

/// `out += W · g`, the input gradient of `x · W`.
pub fn mat_vec_acc(w: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), out.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&w[i * cols..(i + 1) * cols], g);
    }
}

/// `W_grad += x ⊗ g`, the weight gradient of `x · W`.
pub fn outer_acc(x: &[f64], g: &[f64], w_grad: &mut [f64]) {
    let cols = g.len();
    debug_assert_eq!(w_grad.len(), x.len() * cols);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        axpy(&mut w_grad[i * cols..(i + 1) * cols], xi, g);
    }
}

/// Max-subtracted softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_backward_into(y: &[f64], g: &[f64], out: &mut [f64]) {
    let s = dot(y, g);
    for ((o, &yi), &gi) in out.iter_mut().zip(y).zip(g) {
        *o = yi * (gi - s);
    }
}
