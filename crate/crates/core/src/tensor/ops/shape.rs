use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

use super::split_axis;

/// Concatenates two tensors whose shapes agree except along `axis`.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Result<Tensor<T>, TensorError> {
    let (outer, la, inner) = split_axis(a.shape(), axis)?;
    let (_, lb, _) = split_axis(b.shape(), axis)?;
    let compatible = a.rank() == b.rank()
        && a.shape().iter().zip(b.shape()).enumerate().all(|(i, (x, y))| i == axis || x == y);
    if !compatible {
        return Err(shape_err(
            "concat",
            format!("{:?} and {:?} along axis {}", a.shape(), b.shape(), axis),
        ));
    }
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        out.extend_from_slice(&a.data()[o * la * inner..(o + 1) * la * inner]);
        out.extend_from_slice(&b.data()[o * lb * inner..(o + 1) * lb * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = la + lb;
    Tensor::new(shape, out)
}

/// Splits a concatenation gradient back into the two input gradients.
pub fn concat_backward<T: Real>(
    grad_out: &Tensor<T>,
    a_shape: &[usize],
    b_shape: &[usize],
    axis: usize,
) -> (Tensor<T>, Tensor<T>) {
    let (outer, la, inner) = split_axis(a_shape, axis).expect("axis checked in forward");
    let lb = b_shape[axis];
    let mut da = Vec::with_capacity(outer * la * inner);
    let mut db = Vec::with_capacity(outer * lb * inner);
    let row = (la + lb) * inner;
    for o in 0..outer {
        let chunk = &grad_out.data()[o * row..(o + 1) * row];
        da.extend_from_slice(&chunk[..la * inner]);
        db.extend_from_slice(&chunk[la * inner..]);
    }
    (
        Tensor::new(a_shape.to_vec(), da).expect("da"),
        Tensor::new(b_shape.to_vec(), db).expect("db"),
    )
}

/// Mirror index for position `i` in a reflected extension of `0..n`
/// (edge sample not repeated). Handles padding wider than the extent by
/// repeated reflection.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads the two spatial axes of `[N, C, H, W]` by `pad` on every
/// side.
pub fn pad_reflect<T: Real>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>, TensorError> {
    pad_reflect_asym(x, pad, pad, pad, pad)
}

/// Reflect padding with independent `(top, bottom, left, right)` widths.
pub fn pad_reflect_asym<T: Real>(
    x: &Tensor<T>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("pad_reflect")?;
    let (oh, ow) = (h + top + bottom, w + left + right);
    let rows: Vec<usize> = (0..oh).map(|y| reflect_index(y as isize - top as isize, h)).collect();
    let cols: Vec<usize> = (0..ow).map(|v| reflect_index(v as isize - left as isize, w)).collect();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for &sy in &rows {
            out.extend(cols.iter().map(|&sx| plane[sy * w + sx]));
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn pad_reflect_backward<T: Real>(
    input_shape: &[usize],
    top: usize,
    left: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let rows: Vec<usize> = (0..oh).map(|y| reflect_index(y as isize - top as isize, h)).collect();
    let cols: Vec<usize> = (0..ow).map(|v| reflect_index(v as isize - left as isize, w)).collect();
    let mut dx = Tensor::zeros(input_shape);
    for (g, d) in grad_out.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for (oy, &sy) in rows.iter().enumerate() {
            for (ox, &sx) in cols.iter().enumerate() {
                d[sy * w + sx] += g[oy * ow + ox];
            }
        }
    }
    dx
}

/// Keeps the top-left `height x width` window of `[N, C, H, W]`.
pub fn crop<T: Real>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("crop")?;
    if height > h || width > w {
        return Err(shape_err("crop", format!("{}x{} from {}x{}", height, width, h, w)));
    }
    let mut out = Vec::with_capacity(n * c * height * width);
    for plane in x.data().chunks(h * w) {
        for y in 0..height {
            out.extend_from_slice(&plane[y * w..y * w + width]);
        }
    }
    Tensor::new(vec![n, c, height, width], out)
}

pub fn crop_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (height, width) = (grad_out.shape()[2], grad_out.shape()[3]);
    let mut dx = Tensor::zeros(input_shape);
    for (g, d) in grad_out
        .data()
        .chunks(height * width)
        .zip(dx.data_mut().chunks_mut(h * w))
    {
        for y in 0..height {
            d[y * w..y * w + width].copy_from_slice(&g[y * width..(y + 1) * width]);
        }
    }
    dx
}

/// Pixel coordinate `(sample, row, col)` into an `[N, C, H, W]` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelIndex {
    pub sample: usize,
    pub y: usize,
    pub x: usize,
}

/// Gathers the channel vectors at `indices`: `[N, C, H, W] -> [M, C]`.
pub fn gather_pixels<T: Real>(x: &Tensor<T>, indices: &[PixelIndex]) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("gather_pixels")?;
    let mut out = Vec::with_capacity(indices.len() * c);
    for p in indices {
        if p.sample >= n || p.y >= h || p.x >= w {
            return Err(shape_err("gather_pixels", format!("{:?} outside {:?}", p, x.shape())));
        }
        let base = p.sample * c * h * w + p.y * w + p.x;
        out.extend((0..c).map(|k| x.data()[base + k * h * w]));
    }
    Tensor::new(vec![indices.len(), c], out)
}

pub fn gather_pixels_backward<T: Real>(
    input_shape: &[usize],
    indices: &[PixelIndex],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (c, h, w) = (input_shape[1], input_shape[2], input_shape[3]);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (p, g) in indices.iter().zip(grad_out.data().chunks(c)) {
        let base = p.sample * c * h * w + p.y * w + p.x;
        for (k, &gv) in g.iter().enumerate() {
            d[base + k * h * w] += gv;
        }
    }
    dx
}

/// Scaled dot products of each anchor with its candidates:
/// `anchors [M, D]`, `candidates [M, K, D]` -> `[M, K]`.
pub fn pair_logits<T: Real>(
    anchors: &Tensor<T>,
    candidates: &Tensor<T>,
    scale: T,
) -> Result<Tensor<T>, TensorError> {
    let (m, d) = anchors.dims2("pair_logits")?;
    let (cm, k, cd) = match candidates.shape()[..] {
        [a, b, c] => (a, b, c),
        _ => return Err(shape_err("pair_logits", "candidates must be rank 3")),
    };
    if cm != m || cd != d {
        return Err(shape_err(
            "pair_logits",
            format!("{:?} vs {:?}", anchors.shape(), candidates.shape()),
        ));
    }
    let (a, c) = (anchors.data(), candidates.data());
    let mut out = Vec::with_capacity(m * k);
    for mi in 0..m {
        let av = &a[mi * d..(mi + 1) * d];
        for ki in 0..k {
            let cv = &c[(mi * k + ki) * d..(mi * k + ki + 1) * d];
            out.push(av.iter().zip(cv).map(|(&p, &q)| p * q).sum::<T>() * scale);
        }
    }
    Tensor::new(vec![m, k], out)
}

pub fn pair_logits_backward<T: Real>(
    anchors: &Tensor<T>,
    candidates: &Tensor<T>,
    scale: T,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, d) = (anchors.shape()[0], anchors.shape()[1]);
    let k = candidates.shape()[1];
    let (a, c, g) = (anchors.data(), candidates.data(), grad_out.data());
    let mut da = vec![T::zero(); a.len()];
    let mut dc = vec![T::zero(); c.len()];
    for mi in 0..m {
        for ki in 0..k {
            let gs = g[mi * k + ki] * scale;
            let row = (mi * k + ki) * d;
            for j in 0..d {
                da[mi * d + j] += gs * c[row + j];
                dc[row + j] += gs * a[mi * d + j];
            }
        }
    }
    (
        Tensor::new(anchors.shape().to_vec(), da).expect("da"),
        Tensor::new(candidates.shape().to_vec(), dc).expect("dc"),
    )
}
