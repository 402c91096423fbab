//! Affine map over the last axis; all leading axes are treated as rows.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn rows_of<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (fout, fin) = weight.dims2()?;
    let last = *input
        .shape()
        .last()
        .ok_or_else(|| Error::dim("linear on a scalar"))?;
    if last != fin {
        return Err(Error::dim(format!(
            "linear expects {fin} input features, got shape {:?}",
            input.shape()
        )));
    }
    Ok((input.len() / fin, fin, fout))
}

fn output_shape(input: &[usize], fout: usize) -> Vec<usize> {
    let mut shape = input.to_vec();
    *shape.last_mut().expect("non-scalar") = fout;
    shape
}

pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (rows, fin, fout) = rows_of(input, weight)?;
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(Error::dim(format!("bias shape {:?}, expected [{fout}]", b.shape())));
        }
    }
    let x = input.data();
    let w = weight.data();
    let mut out = vec![T::zero(); rows * fout];
    out.par_chunks_mut(fout).enumerate().for_each(|(r, dst)| {
        let xr = &x[r * fin..][..fin];
        for (o, d) in dst.iter_mut().enumerate() {
            let wr = &w[o * fin..][..fin];
            *d = bias.map_or(T::zero(), |b| b.data()[o]) + super::dot(xr, wr);
        }
    });
    debug_assert!(rows > 0);
    Tensor::new(&output_shape(input.shape(), fout), out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (rows, fin, fout) = rows_of(input, weight)?;
    if grad_out.shape() != output_shape(input.shape(), fout).as_slice() {
        return Err(Error::dim("linear grad shape mismatch"));
    }
    let x = input.data();
    let w = weight.data();
    let dy = grad_out.data();

    let mut dx = vec![T::zero(); x.len()];
    dx.par_chunks_mut(fin).enumerate().for_each(|(r, dst)| {
        for o in 0..fout {
            let g = dy[r * fout + o];
            if g == T::zero() {
                continue;
            }
            for (d, wv) in dst.iter_mut().zip(&w[o * fin..][..fin]) {
                *d += g * *wv;
            }
        }
    });

    let mut dw = vec![T::zero(); w.len()];
    dw.par_chunks_mut(fin).enumerate().for_each(|(o, dst)| {
        for r in 0..rows {
            let g = dy[r * fout + o];
            if g == T::zero() {
                continue;
            }
            for (d, xv) in dst.iter_mut().zip(&x[r * fin..][..fin]) {
                *d += g * *xv;
            }
        }
    });

    let bias = with_bias.then(|| {
        let mut db = vec![T::zero(); fout];
        for row in dy.chunks(fout) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += *g;
            }
        }
        Tensor::new(&[fout], db)
    });

    Ok(LinearGrads {
        input: Tensor::new(input.shape(), dx)?,
        weight: Tensor::new(weight.shape(), dw)?,
        bias: bias.transpose()?,
    })
}
