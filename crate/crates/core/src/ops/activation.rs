use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Sigmoid,
    Softplus,
    Relu,
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus for `y > 0`: `y + ln(1 - exp(-y))`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative with respect to the input.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn forward<T: Scalar>(self, input: &Tensor<T>) -> Tensor<T> {
        input.map(|v| self.apply(v))
    }

    pub fn backward<T: Scalar>(self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        input.zip_map(grad_out, |x, g| g * self.derivative(x))
    }
}

/// Softmax along the last axis, max-subtracted.
pub fn softmax_lastdim<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *input
        .shape()
        .last()
        .ok_or_else(|| Error::dim("softmax on a scalar"))?;
    let mut out = input.data().to_vec();
    for row in out.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(input.shape(), out)
}

/// Given softmax output `y`, returns `y * (dy - sum(dy * y))` per row.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    output.expect_same_shape(grad_out, "softmax backward")?;
    let k = *output.shape().last().expect("checked in forward");
    let mut dx = vec![T::zero(); output.len()];
    for ((dst, y), dy) in dx
        .chunks_mut(k)
        .zip(output.data().chunks(k))
        .zip(grad_out.data().chunks(k))
    {
        let dot: T = y.iter().zip(dy).map(|(a, b)| *a * *b).sum();
        for i in 0..k {
            dst[i] = y[i] * (dy[i] - dot);
        }
    }
    Tensor::new(output.shape(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(Activation::Silu.apply(0.0_f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0_f64), 0.5);
        assert!((Activation::Softplus.apply(0.0_f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Activation::Relu.apply(-3.0_f64), 0.0);
    }

    #[test]
    fn softmax_uniform() {
        let x = Tensor::<f64>::zeros(&[1, 4]);
        assert_eq!(softmax_lastdim(&x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let x = Tensor::<f32>::from_f64(&[1, 3], &[1000.0, 0.0, -1000.0]).unwrap();
        let y = softmax_lastdim(&x).unwrap();
        assert!(y.is_finite());
        assert!((y.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn silu_derivative_matches_central_difference() {
        let h = 1e-5;
        let fd = (Activation::Silu.apply(1.0 + h) - Activation::Silu.apply(1.0 - h)) / (2.0 * h);
        assert!((Activation::Silu.derivative(1.0_f64) - fd).abs() < 1e-6);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.01, 0.1, 1.0, 5.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
