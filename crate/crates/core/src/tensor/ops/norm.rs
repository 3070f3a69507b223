use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

use super::split_axis;

/// Per-sample, per-channel standardisation of `[N, C, H, W]`.
///
/// Returns the normalised tensor and the inverse standard deviation of
/// each `(n, c)` plane.
pub fn instance_norm<T: Real>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>), TensorError> {
    let (n, c, h, w) = x.dims4("instance_norm")?;
    let plane = h * w;
    if plane == 0 {
        return Err(shape_err("instance_norm", "empty spatial extent"));
    }
    let count = T::lit(plane as f64);
    let mut out = vec![T::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(n * c);
    for (src, dst) in x.data().chunks(plane).zip(out.chunks_mut(plane)) {
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = (var + eps).sqrt().recip();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    Ok((Tensor::new(vec![n, c, h, w], out)?, inv_std))
}

pub fn instance_norm_backward<T: Real>(
    y: &Tensor<T>,
    inv_std: &[T],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let plane = y.shape()[2] * y.shape()[3];
    let count = T::lit(plane as f64);
    let mut out = vec![T::zero(); y.numel()];
    for (((yp, gp), dp), &inv) in y
        .data()
        .chunks(plane)
        .zip(grad_out.data().chunks(plane))
        .zip(out.chunks_mut(plane))
        .zip(inv_std)
    {
        let sum_g: T = gp.iter().copied().sum();
        let sum_gy: T = gp.iter().zip(yp).map(|(&g, &v)| g * v).sum();
        for ((d, &g), &v) in dp.iter_mut().zip(gp).zip(yp) {
            *d = inv * (g - sum_g / count - v * sum_gy / count);
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("same shape")
}

/// Divides every vector along `axis` by `sqrt(|v|^2 + eps)`.
///
/// Returns the normalised tensor and the divisor of each vector.
pub fn l2_normalize<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    eps: T,
) -> Result<(Tensor<T>, Vec<T>), TensorError> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut norms = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let sq: T = (0..len).map(|k| src[base + k * inner].powi(2)).sum();
            let norm = (sq + eps).sqrt();
            for k in 0..len {
                out[base + k * inner] = src[base + k * inner] / norm;
            }
            norms.push(norm);
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, norms))
}

pub fn l2_normalize_backward<T: Real>(
    y: &Tensor<T>,
    norms: &[T],
    axis: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (outer, len, inner) = split_axis(y.shape(), axis)?;
    let (yd, gd) = (y.data(), grad_out.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let norm = norms[o * inner + i];
            let dot: T = (0..len).map(|k| yd[base + k * inner] * gd[base + k * inner]).sum();
            for k in 0..len {
                let idx = base + k * inner;
                out[idx] = (gd[idx] - yd[idx] * dot) / norm;
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

/// `x * gamma[c] + beta[c]` on `[N, C, H, W]`.
pub fn channel_affine<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (_, c, h, w) = x.dims4("channel_affine")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            "channel_affine",
            format!("{} channels, gamma {:?}, beta {:?}", c, gamma.shape(), beta.shape()),
        ));
    }
    let plane = h * w;
    let mut out = x.data().to_vec();
    for (idx, chunk) in out.chunks_mut(plane).enumerate() {
        let ci = idx % c;
        let (g, b) = (gamma.data()[ci], beta.data()[ci]);
        chunk.iter_mut().for_each(|v| *v = *v * g + b);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn channel_affine_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.numel();
    let plane = x.shape()[2] * x.shape()[3];
    let mut dx = vec![T::zero(); x.numel()];
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    for (idx, ((xp, gp), dp)) in x
        .data()
        .chunks(plane)
        .zip(grad_out.data().chunks(plane))
        .zip(dx.chunks_mut(plane))
        .enumerate()
    {
        let ci = idx % c;
        let gm = gamma.data()[ci];
        for ((d, &g), &v) in dp.iter_mut().zip(gp).zip(xp) {
            *d = g * gm;
            dg[ci] += g * v;
            db[ci] += g;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(vec![c], dg).expect("dg"),
        Tensor::new(vec![c], db).expect("db"),
    )
}
