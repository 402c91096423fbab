//! Pooling and channel-axis ops: global average pooling, channel gating,
//! the 1-D convolution across channels used by ECA, concat and narrow.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `[n, c, h, w] -> [n, c]` spatial mean.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let hw = h * w;
    let inv = T::one() / T::from_usize(hw);
    let out = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::from_usize(hw);
    let mut dx = Vec::with_capacity(hw * grad_out.len());
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(input_shape, dx)
}

/// `x[n, c, :, :] * scale[n, c]`.
pub fn scale_channels<T: Scalar>(input: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if scale.shape() != [n, c] {
        return Err(Error::dim(format!(
            "channel scale {:?} does not match input {:?}",
            scale.shape(),
            input.shape()
        )));
    }
    let hw = h * w;
    let mut out = input.data().to_vec();
    for (plane, &s) in out.chunks_mut(hw).zip(scale.data()) {
        for v in plane {
            *v *= s;
        }
    }
    Tensor::new(input.shape(), out)
}

pub fn scale_channels_backward<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, _, h, w) = input.dims4()?;
    let hw = h * w;
    let dx = scale_channels(grad_out, scale)?;
    let ds = input
        .data()
        .chunks(hw)
        .zip(grad_out.data().chunks(hw))
        .map(|(x, g)| x.iter().zip(g).map(|(a, b)| *a * *b).sum())
        .collect();
    Ok((dx, Tensor::new(scale.shape(), ds)?))
}

/// Zero-padded 1-D convolution of a `[n, c]` descriptor along the channel
/// axis with an odd-length kernel `[k]` (no bias).
pub fn channel_conv1d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = input.dims2()?;
    let k = kernel.len();
    if kernel.ndim() != 1 || k.is_multiple_of(2) {
        return Err(Error::config(format!("channel kernel must be odd 1-D, got {:?}", kernel.shape())));
    }
    let pad = k / 2;
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = T::zero();
            for (j, &wv) in wt.iter().enumerate() {
                let src = ch + j;
                if src >= pad && src - pad < c {
                    acc += wv * x[b * c + src - pad];
                }
            }
            out[b * c + ch] = acc;
        }
    }
    Tensor::new(&[n, c], out)
}

pub fn channel_conv1d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c) = input.dims2()?;
    let k = kernel.len();
    let pad = k / 2;
    let x = input.data();
    let wt = kernel.data();
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); n * c];
    let mut dw = vec![T::zero(); k];
    for b in 0..n {
        for ch in 0..c {
            let g = dy[b * c + ch];
            for j in 0..k {
                let src = ch + j;
                if src >= pad && src - pad < c {
                    dx[b * c + src - pad] += wt[j] * g;
                    dw[j] += x[b * c + src - pad] * g;
                }
            }
        }
    }
    Ok((Tensor::new(&[n, c], dx)?, Tensor::new(&[k], dw)?))
}

/// Concatenates tensors along axis 1 (channels); all other axes must agree.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
    if first.ndim() < 2 {
        return Err(Error::dim("concat_channels needs rank >= 2"));
    }
    let n = first.shape()[0];
    let inner: usize = first.shape()[2..].iter().product();
    let mut channels = 0;
    for p in parts {
        if p.ndim() != first.ndim() || p.shape()[0] != n || p.shape()[2..] != first.shape()[2..] {
            return Err(Error::dim(format!(
                "concat_channels: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        channels += p.shape()[1];
    }
    let mut out = Vec::with_capacity(n * channels * inner);
    for b in 0..n {
        for p in parts {
            let per = p.shape()[1] * inner;
            out.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = channels;
    Tensor::new(&shape, out)
}

/// Channels `start..start+len` along axis 1.
pub fn narrow_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if input.ndim() < 2 || len == 0 || start + len > input.shape()[1] {
        return Err(Error::dim(format!(
            "narrow {start}..{} out of range for {:?}",
            start + len,
            input.shape()
        )));
    }
    let n = input.shape()[0];
    let c = input.shape()[1];
    let inner: usize = input.shape()[2..].iter().product();
    let mut out = Vec::with_capacity(n * len * inner);
    for b in 0..n {
        out.extend_from_slice(&input.data()[(b * c + start) * inner..(b * c + start + len) * inner]);
    }
    let mut shape = input.shape().to_vec();
    shape[1] = len;
    Tensor::new(&shape, out)
}

/// Scatters a narrowed gradient back into a zero tensor of `input_shape`.
pub fn narrow_channels_backward<T: Scalar>(
    input_shape: &[usize],
    start: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let n = input_shape[0];
    let c = input_shape[1];
    let len = grad_out.shape()[1];
    let inner: usize = input_shape[2..].iter().product();
    let mut dx = vec![T::zero(); n * c * inner];
    for b in 0..n {
        dx[(b * c + start) * inner..(b * c + start + len) * inner]
            .copy_from_slice(&grad_out.data()[b * len * inner..(b + 1) * len * inner]);
    }
    Tensor::new(input_shape, dx)
}
