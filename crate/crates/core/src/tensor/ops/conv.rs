//! 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dParams {
    pub fn dilated(dilation: usize) -> Self {
        Self {
            dilation,
            ..Self::default()
        }
    }
}

/// `floor((size + 2p - d(k-1) - 1) / s) + 1`, or `None` when the kernel
/// does not fit.
pub fn conv2d_output_size(size: usize, kernel: usize, p: Conv2dParams) -> Option<usize> {
    let span = p.dilation * (kernel - 1) + 1;
    let padded = size + 2 * p.padding;
    if p.stride == 0 || padded < span {
        return None;
    }
    Some((padded - span) / p.stride + 1)
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    p: Conv2dParams,
}

impl Geometry {
    fn new<T: Real>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        p: Conv2dParams,
    ) -> Result<Self, TensorError> {
        let (n, c, h, w) = input.dims4("conv2d")?;
        let (f, kc, kh, kw) = kernel.dims4("conv2d")?;
        if kc != c {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, kernel expects {}", c, kc),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel {}x{} must be odd", kh, kw)));
        }
        if p.dilation == 0 {
            return Err(shape_err("conv2d", "dilation must be >= 1"));
        }
        let oh = conv2d_output_size(h, kh, p)
            .ok_or_else(|| shape_err("conv2d", format!("kernel does not fit height {}", h)))?;
        let ow = conv2d_output_size(w, kw, p)
            .ok_or_else(|| shape_err("conv2d", format!("kernel does not fit width {}", w)))?;
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
            p,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.p.stride == 1 && self.p.padding == 0
    }

    /// Source index for output row/col `o` at kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.p.stride + k * self.p.dilation) as isize - self.p.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }

    /// Output columns `[lo, hi)` whose source column at tap `k` lies inside
    /// the input, plus the source column of `lo`.
    #[inline]
    fn valid_cols(&self, k: usize) -> (usize, usize) {
        let s = self.p.stride as isize;
        let off = (k * self.p.dilation) as isize - self.p.padding as isize;
        // smallest ox with ox*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest ox with ox*s + off <= w - 1
        let last = self.w as isize - 1 - off;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(self.ow as isize) };
        let lo = lo.min(self.ow as isize);
        (lo as usize, hi.max(lo) as usize)
    }

    /// Output rows per im2col tile; keeps the column buffer cache-sized.
    fn tile_rows(&self) -> usize {
        (2048 / self.ow.max(1)).clamp(1, self.oh.max(1))
    }

    /// Column matrix `[patch, (y1 - y0) * ow]` for output rows `y0..y1`.
    fn im2col<T: Real>(&self, x: &[T], y0: usize, y1: usize, cols: &mut [T]) {
        let pixels = (y1 - y0) * self.ow;
        let stride = self.p.stride;
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * pixels..(row + 1) * pixels];
                    let (lo, hi) = self.valid_cols(kj);
                    let off = (kj * self.p.dilation) as isize - self.p.padding as isize;
                    for oy in y0..y1 {
                        let r = oy - y0;
                        let line = &mut dst[r * self.ow..(r + 1) * self.ow];
                        let Some(iy) = self.src(oy, ki, self.h) else {
                            line.fill(T::zero());
                            continue;
                        };
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo < hi {
                            let start = (lo as isize * stride as isize + off) as usize;
                            if stride == 1 {
                                line[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                            } else {
                                for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                    *v = src_row[start + j * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], y0: usize, y1: usize, dx: &mut [T]) {
        let pixels = (y1 - y0) * self.ow;
        let stride = self.p.stride;
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * pixels..(row + 1) * pixels];
                    let (lo, hi) = self.valid_cols(kj);
                    if lo >= hi {
                        continue;
                    }
                    let off = (kj * self.p.dilation) as isize - self.p.padding as isize;
                    let start = (lo as isize * stride as isize + off) as usize;
                    for oy in y0..y1 {
                        let Some(iy) = self.src(oy, ki, self.h) else {
                            continue;
                        };
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let r = (oy - y0) * self.ow;
                        let line = &src[r + lo..r + hi];
                        for (j, &v) in line.iter().enumerate() {
                            dst_row[start + j * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input [N,C,H,W]` with `kernel [F,C,kH,kW]`, plus an
/// optional per-filter `bias [F]`. Zero padding.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: Conv2dParams,
) -> Result<Tensor<T>, TensorError> {
    let g = Geometry::new(input, kernel, p)?;
    if let Some(b) = bias {
        if b.shape() != [g.f] {
            return Err(shape_err("conv2d", format!("bias shape {:?}", b.shape())));
        }
    }
    let (patch, pixels) = (g.patch(), g.pixels());
    let in_stride = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.f * pixels];
    out.par_chunks_mut(g.f * pixels)
        .enumerate()
        .for_each(|(ni, out_n)| {
            let x = &input.data()[ni * in_stride..(ni + 1) * in_stride];
            if g.is_pointwise() {
                T::gemm(
                    g.f, patch, pixels, T::one(), kernel.data(), patch as isize, 1, x,
                    pixels as isize, 1, T::zero(), out_n, pixels as isize, 1,
                );
            } else {
                let step = g.tile_rows();
                let mut cols = vec![T::zero(); patch * step * g.ow];
                for y0 in (0..g.oh).step_by(step) {
                    let y1 = (y0 + step).min(g.oh);
                    let tp = (y1 - y0) * g.ow;
                    g.im2col(x, y0, y1, &mut cols[..patch * tp]);
                    T::gemm(
                        g.f,
                        patch,
                        tp,
                        T::one(),
                        kernel.data(),
                        patch as isize,
                        1,
                        &cols[..patch * tp],
                        tp as isize,
                        1,
                        T::zero(),
                        &mut out_n[y0 * g.ow..],
                        pixels as isize,
                        1,
                    );
                }
            }
            if let Some(b) = bias {
                for (fi, row) in out_n.chunks_mut(pixels).enumerate() {
                    let bv = b.data()[fi];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)
}

pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Gradients of [`conv2d`]. Per-sample kernel gradients are reduced in
/// sample order so the result does not depend on thread scheduling.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    with_bias: bool,
    p: Conv2dParams,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_kernel: bool,
) -> Result<Conv2dGrads<T>, TensorError> {
    let g = Geometry::new(input, kernel, p)?;
    if grad_out.shape() != [g.n, g.f, g.oh, g.ow] {
        return Err(shape_err("conv2d_backward", "gradient shape"));
    }
    let (patch, pixels) = (g.patch(), g.pixels());
    let in_stride = g.c * g.h * g.w;
    let out_stride = g.f * pixels;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..g.n)
        .into_par_iter()
        .map(|ni| {
            let x = &input.data()[ni * in_stride..(ni + 1) * in_stride];
            let go = &grad_out.data()[ni * out_stride..(ni + 1) * out_stride];
            let mut dk = need_kernel.then(|| vec![T::zero(); g.f * patch]);
            let mut dx = need_input.then(|| vec![T::zero(); in_stride]);
            if g.is_pointwise() {
                if let Some(dk) = dk.as_mut() {
                    // dK[F, P] = gO[F, HW] * x^T[HW, P]
                    T::gemm(
                        g.f, pixels, patch, T::one(), go, pixels as isize, 1, x, 1,
                        pixels as isize, T::zero(), dk, patch as isize, 1,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    // dx[P, HW] = K^T[P, F] * gO[F, HW]
                    T::gemm(
                        patch, g.f, pixels, T::one(), kernel.data(), 1, patch as isize, go,
                        pixels as isize, 1, T::zero(), dx, pixels as isize, 1,
                    );
                }
                return (dx, dk);
            }
            let step = g.tile_rows();
            let mut cols = vec![T::zero(); patch * step * g.ow];
            for y0 in (0..g.oh).step_by(step) {
                let y1 = (y0 + step).min(g.oh);
                let tp = (y1 - y0) * g.ow;
                let go_tile = &go[y0 * g.ow..];
                if let Some(dk) = dk.as_mut() {
                    g.im2col(x, y0, y1, &mut cols[..patch * tp]);
                    T::gemm(
                        g.f,
                        tp,
                        patch,
                        T::one(),
                        go_tile,
                        pixels as isize,
                        1,
                        &cols[..patch * tp],
                        1,
                        tp as isize,
                        T::one(),
                        dk,
                        patch as isize,
                        1,
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    T::gemm(
                        patch,
                        g.f,
                        tp,
                        T::one(),
                        kernel.data(),
                        1,
                        patch as isize,
                        go_tile,
                        pixels as isize,
                        1,
                        T::zero(),
                        &mut cols[..patch * tp],
                        tp as isize,
                        1,
                    );
                    g.col2im(&cols[..patch * tp], y0, y1, dx);
                }
            }
            (dx, dk)
        })
        .collect();

    let mut dinput = need_input.then(|| Vec::with_capacity(input.numel()));
    let mut dkernel = need_kernel.then(|| vec![T::zero(); kernel.numel()]);
    for (dx, dk) in per_sample {
        if let (Some(acc), Some(dx)) = (dinput.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let (Some(acc), Some(dk)) = (dkernel.as_mut(), dk) {
            for (a, v) in acc.iter_mut().zip(dk) {
                *a += v;
            }
        }
    }
    let dbias = with_bias.then(|| {
        let mut db = vec![T::zero(); g.f];
        for ni in 0..g.n {
            for (fi, d) in db.iter_mut().enumerate() {
                let start = ni * out_stride + fi * pixels;
                *d += grad_out.data()[start..start + pixels].iter().copied().sum::<T>();
            }
        }
        Tensor::new(vec![g.f], db).expect("bias shape")
    });
    Ok(Conv2dGrads {
        input: dinput.map(|d| Tensor::new(input.shape().to_vec(), d).expect("input shape")),
        kernel: dkernel.map(|d| Tensor::new(kernel.shape().to_vec(), d).expect("kernel shape")),
        bias: dbias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop evaluation, independent of im2col.
    fn naive(x: &Tensor<f64>, k: &Tensor<f64>, p: Conv2dParams) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4("t").unwrap();
        let (f, _, kh, kw) = k.dims4("t").unwrap();
        let oh = conv2d_output_size(h, kh, p).unwrap();
        let ow = conv2d_output_size(w, kw, p).unwrap();
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        for ni in 0..n {
            for fi in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * p.stride + ki * p.dilation) as isize
                                        - p.padding as isize;
                                    let ix = (ox * p.stride + kj * p.dilation) as isize
                                        - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((ni * c + ci) * h + iy as usize) * w
                                        + ix as usize]
                                        * k.data()[((fi * c + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], salt: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + salt) * 1.618).sin())
    }

    #[test]
    fn identity_kernel_returns_input() {
        let x = pseudo(&[2, 1, 5, 4], 0.3);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, None, Conv2dParams::default()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::<f64>::zeros(&[1, 2, 6, 6]);
        let k = pseudo(&[3, 2, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, Conv2dParams { padding: 1, ..Default::default() }).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_evaluation_across_geometries() {
        for &(stride, padding, dilation) in &[(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 3, 3)] {
            let p = Conv2dParams { stride, padding, dilation };
            let x = pseudo(&[2, 3, 9, 8], 0.1);
            let k = pseudo(&[4, 3, 3, 3], 2.0);
            let fast = conv2d(&x, &k, None, p).unwrap();
            let slow = naive(&x, &k, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{:?}", p);
            }
        }
    }

    #[test]
    fn output_size_formula() {
        let p = Conv2dParams { stride: 2, padding: 1, dilation: 2 };
        // floor((10 + 2 - 4 - 1)/2) + 1 = 4
        assert_eq!(conv2d_output_size(10, 3, p), Some(4));
        assert_eq!(conv2d_output_size(2, 5, Conv2dParams::default()), None);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = pseudo(&[1, 2, 5, 5], 0.0);
        let k = pseudo(&[1, 3, 3, 3], 0.0);
        assert!(conv2d(&x, &k, None, Conv2dParams::default()).is_err());
        let even = pseudo(&[1, 2, 2, 2], 0.0);
        assert!(conv2d(&x, &even, None, Conv2dParams::default()).is_err());
    }

    #[test]
    fn bias_adds_per_filter() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let k = pseudo(&[2, 1, 3, 3], 0.0);
        let b = Tensor::new(vec![2], vec![1.5, -2.0]).unwrap();
        let y = conv2d(&x, &k, Some(&b), Conv2dParams { padding: 1, ..Default::default() }).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 1.5));
        assert!(y.data()[9..].iter().all(|&v| v == -2.0));
    }
}
