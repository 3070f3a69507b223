use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

/// 2x2 max pooling with stride 2 on `[N, C, H, W]`; odd trailing rows and
/// columns are dropped. Returns the pooled tensor and, for every output
/// element, the flat index of the selected input element.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let (n, c, h, w) = x.dims4("maxpool2")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(shape_err("maxpool2", format!("{}x{} too small", h, w)));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    dx
}

/// Source taps of one output coordinate: `(lo, hi, weight_of_hi)`.
fn bilinear_taps(size: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..size * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (size - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(size - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor with half-pixel centres and
/// edge clamping.
pub fn upsample_bilinear<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("upsample_bilinear")?;
    if factor == 0 || h == 0 || w == 0 {
        return Err(shape_err("upsample_bilinear", "factor and extents must be >= 1"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let ys = bilinear_taps(h, factor);
    let xs = bilinear_taps(w, factor);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let wx = T::lit(wx);
                let top = src[y0 * w + x0] * (T::one() - wx) + src[y0 * w + x1] * wx;
                let bottom = src[y1 * w + x0] * (T::one() - wx) + src[y1 * w + x1] * wx;
                dst[oy * ow + ox] = top * (T::one() - wy) + bottom * wy;
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn upsample_bilinear_backward<T: Real>(
    input_shape: &[usize],
    factor: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h * factor, w * factor);
    let ys = bilinear_taps(h, factor);
    let xs = bilinear_taps(w, factor);
    let mut dx = Tensor::zeros(input_shape);
    for (g, d) in grad_out.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let wy = T::lit(wy);
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let wx = T::lit(wx);
                let gv = g[oy * ow + ox];
                let top = gv * (T::one() - wy);
                let bottom = gv * wy;
                d[y0 * w + x0] += top * (T::one() - wx);
                d[y0 * w + x1] += top * wx;
                d[y1 * w + x0] += bottom * (T::one() - wx);
                d[y1 * w + x1] += bottom * wx;
            }
        }
    }
    dx
}

/// Spatial mean: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let count = T::lit((h * w) as f64);
    let out = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() / count)
        .collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let plane = input_shape[2] * input_shape[3];
    let count = T::lit(plane as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (d, &g) in dx.data_mut().chunks_mut(plane).zip(grad_out.data()) {
        d.fill(g / count);
    }
    dx
}
