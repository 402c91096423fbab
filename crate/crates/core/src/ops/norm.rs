//! Batch normalization over NCHW and layer normalization across channels.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Saved per-channel statistics for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    /// Normalized input, same shape as the input.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per normalization group.
    pub inv_std: Vec<T>,
}

/// Batch statistics produced in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as folded into running statistics.
    pub var_unbiased: Vec<T>,
}

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(format!(
            "norm affine params {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Training-mode batch norm: normalizes by batch statistics.
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>, BatchStats<T>)> {
    let (n, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    let hw = h * w;
    let m = n * hw;
    if m < 2 {
        return Err(Error::dim(format!(
            "batch norm in training mode needs at least 2 values per channel, got {m}"
        )));
    }
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut stats = BatchStats {
        mean: Vec::with_capacity(c),
        var_unbiased: Vec::with_capacity(c),
    };
    let mf = T::from_usize(m);
    for ch in 0..c {
        let plane = |b: usize| (b * c + ch) * hw..(b * c + ch + 1) * hw;
        let mut sum = T::zero();
        for b in 0..n {
            sum += x[plane(b)].iter().copied().sum::<T>();
        }
        let mean = sum / mf;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &x[plane(b)] {
                sq += (v - mean) * (v - mean);
            }
        }
        let var = sq / mf;
        let istd = T::one() / (var + T::from_f64(eps)).sqrt();
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            for i in plane(b) {
                let xh = (x[i] - mean) * istd;
                xhat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
        inv_std.push(istd);
        stats.mean.push(mean);
        stats.var_unbiased.push(sq / T::from_usize(m - 1));
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        NormCache {
            xhat: Tensor::new(input.shape(), xhat)?,
            inv_std,
        },
        stats,
    ))
}

/// Inference-mode batch norm using running statistics.
pub fn batch_norm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    check_affine(c, running_mean, running_var)?;
    let hw = h * w;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let inv_std: Vec<T> = running_var
        .data()
        .iter()
        .map(|&v| T::one() / (v + T::from_f64(eps)).sqrt())
        .collect();
    for b in 0..n {
        for ch in 0..c {
            let (g, bt, mu, istd) = (
                gamma.data()[ch],
                beta.data()[ch],
                running_mean.data()[ch],
                inv_std[ch],
            );
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                let xh = (x[i] - mu) * istd;
                xhat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        NormCache {
            xhat: Tensor::new(input.shape(), xhat)?,
            inv_std,
        },
    ))
}

pub struct AffineNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Backward of batch norm. `batch_stats` selects the training-mode formula
/// (gradient flows through the batch mean and variance).
pub fn batch_norm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
    grad_out: &Tensor<T>,
    batch_stats: bool,
) -> Result<AffineNormGrads<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let m = T::from_usize(n * hw);
    let dy = grad_out.data();
    let xh = cache.xhat.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sdy = T::zero();
        let mut sdyx = T::zero();
        for b in 0..n {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                sdy += dy[i];
                sdyx += dy[i] * xh[i];
            }
        }
        dgamma[ch] = sdyx;
        dbeta[ch] = sdy;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        for b in 0..n {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                dx[i] = if batch_stats {
                    scale * (dy[i] - sdy / m - xh[i] * sdyx / m)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    Ok(AffineNormGrads {
        input: Tensor::new(grad_out.shape(), dx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}

/// Layer norm across the channel axis at every spatial position of an NCHW map.
pub fn layer_norm_channels<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    let hw = h * w;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); n * hw];
    let cf = T::from_usize(c);
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let idx = |ch: usize| base + ch * hw + p;
            let mean = (0..c).map(|ch| x[idx(ch)]).sum::<T>() / cf;
            let var = (0..c)
                .map(|ch| (x[idx(ch)] - mean) * (x[idx(ch)] - mean))
                .sum::<T>()
                / cf;
            let istd = T::one() / (var + T::from_f64(eps)).sqrt();
            inv_std[b * hw + p] = istd;
            for ch in 0..c {
                let xh = (x[idx(ch)] - mean) * istd;
                xhat[idx(ch)] = xh;
                out[idx(ch)] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        NormCache {
            xhat: Tensor::new(input.shape(), xhat)?,
            inv_std,
        },
    ))
}

pub fn layer_norm_channels_backward<T: Scalar>(
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<AffineNormGrads<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let dy = grad_out.data();
    let xh = cache.xhat.data();
    let g = gamma.data();
    let cf = T::from_usize(c);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let idx = |ch: usize| base + ch * hw + p;
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for ch in 0..c {
                let i = idx(ch);
                let dyg = dy[i] * g[ch];
                s1 += dyg;
                s2 += dyg * xh[i];
                dgamma[ch] += dy[i] * xh[i];
                dbeta[ch] += dy[i];
            }
            let istd = cache.inv_std[b * hw + p];
            for ch in 0..c {
                let i = idx(ch);
                dx[i] = istd * (dy[i] * g[ch] - s1 / cf - xh[i] * s2 / cf);
            }
        }
    }
    Ok(AffineNormGrads {
        input: Tensor::new(grad_out.shape(), dx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}
