//! Forward kernels and their analytic backward passes, as pure functions on
//! [`Tensor`](crate::Tensor)s. The autodiff tape in [`crate::graph`] wires them together.

pub mod activation;
pub mod channel;
pub mod conv;
pub mod linear;
pub mod norm;

pub use activation::{softmax_lastdim, Activation};
pub use channel::{channel_conv1d, concat_channels, global_avg_pool, narrow_channels, scale_channels};
pub use conv::{conv2d, Conv2dSpec};
pub use linear::linear;
pub use norm::{batch_norm_infer, batch_norm_train, layer_norm_channels};

use crate::tensor::Scalar;

/// Dot product of equal-length slices, accumulated in eight interleaved lanes
/// so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}
