//! Direct 2-D convolution (grouped, strided, zero padded) and its gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    /// 1x1, stride 1, no padding, dense.
    pub const fn pointwise() -> Self {
        Self::new(1, 0, 1)
    }

    /// `floor((size + 2*padding - kernel)/stride) + 1`.
    pub fn output_size(&self, size: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::config("conv stride must be >= 1"));
        }
        let padded = size + 2 * self.padding;
        if padded < kernel {
            return Err(Error::dim(format!(
                "kernel {kernel} larger than padded input {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, spec: Conv2dSpec) -> Result<Geometry> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, cin_g, kh, kw) = weight.dims4()?;
    if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(Error::config(format!(
            "groups {} must divide in channels {cin} and out channels {cout}",
            spec.groups
        )));
    }
    if cin / spec.groups != cin_g {
        return Err(Error::dim(format!(
            "weight expects {cin_g} channels per group, input gives {}",
            cin / spec.groups
        )));
    }
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g: cout / spec.groups,
        kh,
        kw,
        ho: spec.output_size(h, kh)?,
        wo: spec.output_size(w, kw)?,
    })
}

/// Range of output columns whose tap `k` lands inside the input row.
#[inline]
fn valid_range(out: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < size
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if size + pad > k {
        ((size + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// `dst[i] += w * src[start + i * stride]`.
#[inline]
fn axpy<T: Scalar>(dst: &mut [T], src: &[T], w: T, start: usize, stride: usize) {
    let n = dst.len();
    if n == 0 {
        return;
    }
    if stride == 1 {
        for (d, &v) in dst.iter_mut().zip(&src[start..start + n]) {
            *d += w * v;
        }
    } else {
        for (i, d) in dst.iter_mut().enumerate() {
            *d += w * src[start + i * stride];
        }
    }
}

/// `dst[start + i * stride] += w * src[i]`.
#[inline]
fn scatter_axpy<T: Scalar>(dst: &mut [T], src: &[T], w: T, start: usize, stride: usize) {
    if src.is_empty() {
        return;
    }
    if stride == 1 {
        for (d, &v) in dst[start..start + src.len()].iter_mut().zip(src) {
            *d += w * v;
        }
    } else {
        for (i, &v) in src.iter().enumerate() {
            dst[start + i * stride] += w * v;
        }
    }
}

/// `sum_i a[i] * b[start + i * stride]`.
#[inline]
fn strided_dot<T: Scalar>(a: &[T], b: &[T], start: usize, stride: usize) -> T {
    if a.is_empty() {
        T::zero()
    } else if stride == 1 {
        super::dot(a, &b[start..start + a.len()])
    } else {
        a.iter().enumerate().map(|(i, &v)| v * b[start + i * stride]).sum()
    }
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = geometry(input, weight, spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::dim(format!("bias shape {:?}, expected [{}]", b.shape(), g.cout)));
        }
    }
    let (s, p) = (spec.stride, spec.padding);
    let x = input.data();
    let wt = weight.data();
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, dst)| {
        let (n, oc) = (idx / g.cout, idx % g.cout);
        let group = oc / g.cout_g;
        if let Some(b) = bias {
            dst.fill(b.data()[oc]);
        }
        for icg in 0..g.cin_g {
            let ic = group * g.cin_g + icg;
            let src = &x[(n * g.cin + ic) * plane_in..][..plane_in];
            let wbase = ((oc * g.cin_g) + icg) * g.kh * g.kw;
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.ho, g.h, ky, s, p);
                for kx in 0..g.kw {
                    let wv = wt[wbase + ky * g.kw + kx];
                    let (ox0, ox1) = valid_range(g.wo, g.w, kx, s, p);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let row = &src[iy * g.w..][..g.w];
                        let drow = &mut dst[oy * g.wo..][..g.wo];
                        axpy(&mut drow[ox0..ox1], row, wv, ox0 * s + kx - p, s);
                    }
                }
            }
        }
    });
    Tensor::new(&[g.n, g.cout, g.ho, g.wo], out)
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<Conv2dGrads<T>> {
    let g = geometry(input, weight, spec)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(Error::dim(format!(
            "conv grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.n, g.cout, g.ho, g.wo]
        )));
    }
    let (s, p) = (spec.stride, spec.padding);
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;

    let mut dx = vec![T::zero(); x.len()];
    dx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, dst)| {
        let (n, ic) = (idx / g.cin, idx % g.cin);
        let group = ic / g.cin_g;
        let icg = ic % g.cin_g;
        for oc in group * g.cout_g..(group + 1) * g.cout_g {
            let src = &dy[(n * g.cout + oc) * plane_out..][..plane_out];
            let wbase = ((oc * g.cin_g) + icg) * g.kh * g.kw;
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.ho, g.h, ky, s, p);
                for kx in 0..g.kw {
                    let wv = wt[wbase + ky * g.kw + kx];
                    let (ox0, ox1) = valid_range(g.wo, g.w, kx, s, p);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - p;
                        let grow = &src[oy * g.wo..][..g.wo];
                        let drow = &mut dst[iy * g.w..][..g.w];
                        scatter_axpy(drow, &grow[ox0..ox1], wv, ox0 * s + kx - p, s);
                    }
                }
            }
        }
    });

    let per_oc = g.cin_g * g.kh * g.kw;
    let mut dw = vec![T::zero(); wt.len()];
    dw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, dst)| {
        let group = oc / g.cout_g;
        for icg in 0..g.cin_g {
            let ic = group * g.cin_g + icg;
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.ho, g.h, ky, s, p);
                for kx in 0..g.kw {
                    let (ox0, ox1) = valid_range(g.wo, g.w, kx, s, p);
                    let mut acc = T::zero();
                    for n in 0..g.n {
                        let src = &x[(n * g.cin + ic) * plane_in..][..plane_in];
                        let grad = &dy[(n * g.cout + oc) * plane_out..][..plane_out];
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let row = &src[iy * g.w..][..g.w];
                            let grow = &grad[oy * g.wo..][..g.wo];
                            acc += strided_dot(&grow[ox0..ox1], row, ox0 * s + kx - p, s);
                        }
                    }
                    dst[(icg * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });

    let bias = with_bias.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for n in 0..g.n {
            for (oc, acc) in db.iter_mut().enumerate() {
                *acc += dy[(n * g.cout + oc) * plane_out..][..plane_out]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        Tensor::new(&[g.cout], db)
    });

    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), dx)?,
        weight: Tensor::new(weight.shape(), dw)?,
        bias: bias.transpose()?,
    })
}
