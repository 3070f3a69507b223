use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

use super::split_axis;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, TensorError> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    if len == 0 {
        return Err(shape_err("softmax", "empty axis"));
    }
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..len {
                max = max.max(src[base + k * inner]);
            }
            let mut total = T::zero();
            for k in 0..len {
                let e = (src[base + k * inner] - max).exp();
                out[base + k * inner] = e;
                total += e;
            }
            for k in 0..len {
                out[base + k * inner] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_backward<T: Real>(
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Result<Tensor<T>, TensorError> {
    let (outer, len, inner) = split_axis(y.shape(), axis)?;
    let (yd, gd) = (y.data(), grad_out.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: T = (0..len).map(|k| yd[base + k * inner] * gd[base + k * inner]).sum();
            for k in 0..len {
                let idx = base + k * inner;
                out[idx] = yd[idx] * (gd[idx] - dot);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}
