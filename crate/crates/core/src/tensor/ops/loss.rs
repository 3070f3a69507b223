use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

use super::split_axis;

/// Mean negative log-softmax of the target class along `axis`.
///
/// `targets` enumerates the non-class positions in row-major order (for
/// `[N, K, H, W]` with `axis = 1` that is `n * H * W + y * W + x`).
/// Positions whose target equals `ignore_index` are skipped; if every
/// position is ignored the loss is zero. Also returns the softmax
/// probabilities for the backward pass.
pub fn cross_entropy<T: Real>(
    logits: &Tensor<T>,
    axis: usize,
    targets: &[usize],
    ignore_index: Option<usize>,
) -> Result<(T, Tensor<T>), TensorError> {
    let (outer, classes, inner) = split_axis(logits.shape(), axis)?;
    if targets.len() != outer * inner {
        return Err(shape_err(
            "cross_entropy",
            format!("{} targets for {} positions", targets.len(), outer * inner),
        ));
    }
    for &t in targets {
        if t >= classes && Some(t) != ignore_index {
            return Err(TensorError::TargetOutOfRange { target: t, classes });
        }
    }
    let probs = super::softmax(logits, axis)?;
    let src = logits.data();
    let mut total = T::zero();
    let mut count = 0usize;
    for o in 0..outer {
        for i in 0..inner {
            let t = targets[o * inner + i];
            if Some(t) == ignore_index {
                continue;
            }
            let base = o * classes * inner + i;
            let mut max = T::neg_infinity();
            for k in 0..classes {
                max = max.max(src[base + k * inner]);
            }
            let lse = max
                + (0..classes)
                    .map(|k| (src[base + k * inner] - max).exp())
                    .sum::<T>()
                    .ln();
            total += lse - src[base + t * inner];
            count += 1;
        }
    }
    let loss = if count == 0 {
        T::zero()
    } else {
        total / T::lit(count as f64)
    };
    Ok((loss, probs))
}

pub fn cross_entropy_backward<T: Real>(
    probs: &Tensor<T>,
    axis: usize,
    targets: &[usize],
    ignore_index: Option<usize>,
    grad_out: T,
) -> Result<Tensor<T>, TensorError> {
    let (outer, classes, inner) = split_axis(probs.shape(), axis)?;
    let count = targets.iter().filter(|&&t| Some(t) != ignore_index).count();
    let mut out = vec![T::zero(); probs.numel()];
    if count == 0 {
        return Tensor::new(probs.shape().to_vec(), out);
    }
    let scale = grad_out / T::lit(count as f64);
    let p = probs.data();
    for o in 0..outer {
        for i in 0..inner {
            let t = targets[o * inner + i];
            if Some(t) == ignore_index {
                continue;
            }
            let base = o * classes * inner + i;
            for k in 0..classes {
                let idx = base + k * inner;
                let onehot = if k == t { T::one() } else { T::zero() };
                out[idx] = (p[idx] - onehot) * scale;
            }
        }
    }
    Tensor::new(probs.shape().to_vec(), out)
}
