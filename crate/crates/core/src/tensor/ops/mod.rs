//! Forward and backward kernels for every differentiable operation.
//!
//! These are plain functions on [`Tensor`](super::Tensor) values; the
//! [`Graph`](super::Graph) tape records which kernel produced each node and
//! dispatches to the matching backward function.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;

pub use activation::{relu, softmax};
pub use conv::{conv2d, conv2d_output_size, Conv2dParams};
pub use linear::linear;
pub use loss::cross_entropy;
pub use norm::{channel_affine, instance_norm, l2_normalize};
pub use pool::{global_avg_pool, maxpool2, upsample_bilinear};
pub use shape::{concat, crop, gather_pixels, pad_reflect, pair_logits};

use super::TensorError;

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), TensorError> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}
