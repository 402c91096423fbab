//! Diagonal state-space machinery.
//!
//! Continuous system per channel `d` and state `n`: `h' = a[d,n] h + b[n] x`,
//! `y = sum_n c[n] h + d_skip[d] x`. Discretized with zero-order hold at a
//! per-step timescale `delta[t,d]`:
//!
//! ```text
//! a_bar = exp(delta * a)
//! b_bar = (delta * a)^-1 (exp(delta * a) - 1) * delta * b  =  expm1(delta * a) / a * b
//! h_t   = a_bar_t * h_{t-1} + b_bar_t * x_t          (h_{-1} = 0)
//! y_t   = c_t . h_t + d_skip * x_t
//! ```
//!
//! For time-invariant parameters the same map is a causal convolution with
//! kernel `K = (c b_bar, c a_bar b_bar, ..., c a_bar^{L-1} b_bar)`.

mod kernel;
pub mod s6;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use kernel::{ScanDims, ScanGrads};
pub(crate) use kernel::{scan_backward, scan_forward};
pub use s6::{S6Config, S6};

/// Below this `|delta * a|` the input factor uses its Taylor expansion.
pub const TAYLOR_THRESHOLD: f64 = 1e-8;

/// Factor `f` with `b_bar = f * b`: `expm1(delta*a)/a`, or `delta (1 + delta*a/2)`
/// when `|delta*a|` is below [`TAYLOR_THRESHOLD`].
#[inline]
pub fn zoh_input_factor<T: Scalar>(delta: T, a: T) -> T {
    let z = delta * a;
    if z.abs() < T::from_f64(TAYLOR_THRESHOLD) {
        delta * (T::one() + z * T::from_f64(0.5))
    } else {
        z.exp_m1() / a
    }
}

/// Scalar ZOH: returns `(a_bar, b_bar)` for one `(a, b, delta)` triple.
pub fn discretize_scalar<T: Scalar>(a: T, b: T, delta: T) -> Result<(T, T)> {
    check_delta(delta)?;
    check_a(a)?;
    Ok(((delta * a).exp(), zoh_input_factor(delta, a) * b))
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if delta <= T::zero() || !delta.is_finite() {
        return Err(Error::Domain(format!("timescale must be positive and finite, got {delta}")));
    }
    Ok(())
}

fn check_a<T: Scalar>(a: T) -> Result<()> {
    if a >= T::zero() || !a.is_finite() {
        return Err(Error::Domain(format!("state matrix entries must be negative, got {a}")));
    }
    Ok(())
}

/// Input-dependent parameters of one sequence.
#[derive(Clone, Debug)]
pub struct SsmParams<T> {
    /// Diagonal state matrix, `[d_inner, n]`, strictly negative.
    pub a: Tensor<T>,
    /// `[len, n]`
    pub b: Tensor<T>,
    /// `[len, n]`
    pub c: Tensor<T>,
    /// Per-step timescale, `[len, d_inner]`, strictly positive.
    pub delta: Tensor<T>,
    /// Direct passthrough gain, `[d_inner]`.
    pub d_skip: Tensor<T>,
}

impl<T: Scalar> SsmParams<T> {
    pub fn new(
        a: Tensor<T>,
        b: Tensor<T>,
        c: Tensor<T>,
        delta: Tensor<T>,
        d_skip: Tensor<T>,
    ) -> Result<Self> {
        let params = Self {
            a,
            b,
            c,
            delta,
            d_skip,
        };
        let dims = params.dims()?;
        if params.c.shape() != [dims.len, dims.d_state] {
            return Err(Error::dim(format!(
                "C is {:?}, expected [{}, {}]",
                params.c.shape(),
                dims.len,
                dims.d_state
            )));
        }
        if params.delta.shape() != [dims.len, dims.d_inner] {
            return Err(Error::dim(format!(
                "delta is {:?}, expected [{}, {}]",
                params.delta.shape(),
                dims.len,
                dims.d_inner
            )));
        }
        if params.d_skip.shape() != [dims.d_inner] {
            return Err(Error::dim("D_skip must be [d_inner]"));
        }
        params.a.data().iter().try_for_each(|&v| check_a(v))?;
        params.delta.data().iter().try_for_each(|&v| check_delta(v))?;
        Ok(params)
    }

    pub fn dims(&self) -> Result<ScanDims> {
        let (d_inner, d_state) = self.a.dims2()?;
        let (len, n_b) = self.b.dims2()?;
        if n_b != d_state {
            return Err(Error::dim(format!("B has {n_b} states, A has {d_state}")));
        }
        Ok(ScanDims {
            len,
            d_inner,
            d_state,
        })
    }
}

/// Discretized transition and input matrices, both `[len, d_inner, n]`.
#[derive(Clone, Debug)]
pub struct DiscreteParams<T> {
    pub a_bar: Tensor<T>,
    pub b_bar: Tensor<T>,
}

/// Zero-order-hold discretization of every `(t, d, n)` entry.
pub fn discretize_zoh<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    delta: &Tensor<T>,
) -> Result<DiscreteParams<T>> {
    let (d_inner, d_state) = a.dims2()?;
    let (len, n_b) = b.dims2()?;
    if n_b != d_state || delta.shape() != [len, d_inner] {
        return Err(Error::dim(format!(
            "discretize: A {:?}, B {:?}, delta {:?}",
            a.shape(),
            b.shape(),
            delta.shape()
        )));
    }
    let mut a_bar = Vec::with_capacity(len * d_inner * d_state);
    let mut b_bar = Vec::with_capacity(len * d_inner * d_state);
    for t in 0..len {
        for d in 0..d_inner {
            let dt = delta.data()[t * d_inner + d];
            for n in 0..d_state {
                let (ab, bb) = discretize_scalar(a.data()[d * d_state + n], b.data()[t * d_state + n], dt)?;
                a_bar.push(ab);
                b_bar.push(bb);
            }
        }
    }
    let shape = [len, d_inner, d_state];
    Ok(DiscreteParams {
        a_bar: Tensor::new(&shape, a_bar)?,
        b_bar: Tensor::new(&shape, b_bar)?,
    })
}

/// Recurrence over already-discretized parameters: `x` is `[len, d_inner]`,
/// `c` is `[len, n]`, `d_skip` is `[d_inner]`.
pub fn scan_discrete<T: Scalar>(
    x: &Tensor<T>,
    params: &DiscreteParams<T>,
    c: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (len, d_inner, d_state) = params.a_bar.dims3()?;
    if x.shape() != [len, d_inner]
        || params.b_bar.shape() != params.a_bar.shape()
        || c.shape() != [len, d_state]
        || d_skip.shape() != [d_inner]
    {
        return Err(Error::dim("scan_discrete: inconsistent shapes"));
    }
    let mut h = vec![T::zero(); d_inner * d_state];
    let mut y = vec![T::zero(); len * d_inner];
    for t in 0..len {
        for d in 0..d_inner {
            let xv = x.data()[t * d_inner + d];
            let mut acc = d_skip.data()[d] * xv;
            for n in 0..d_state {
                let i = (t * d_inner + d) * d_state + n;
                let s = &mut h[d * d_state + n];
                *s = params.a_bar.data()[i] * *s + params.b_bar.data()[i] * xv;
                acc += c.data()[t * d_state + n] * *s;
            }
            if !acc.is_finite() {
                return Err(Error::Numeric(format!("scan diverged at step {t}, channel {d}")));
            }
            y[t * d_inner + d] = acc;
        }
    }
    Tensor::new(&[len, d_inner], y)
}

/// Fused ZOH discretization and recurrence for one sequence `x: [len, d_inner]`.
pub fn selective_scan<T: Scalar>(x: &Tensor<T>, params: &SsmParams<T>) -> Result<Tensor<T>> {
    let dims = params.dims()?;
    if x.shape() != [dims.len, dims.d_inner] {
        return Err(Error::dim(format!(
            "scan input {:?}, expected [{}, {}]",
            x.shape(),
            dims.len,
            dims.d_inner
        )));
    }
    let y = scan_forward(
        dims,
        x.data(),
        params.delta.data(),
        params.a.data(),
        params.b.data(),
        params.c.data(),
        params.d_skip.data(),
        None,
    )?;
    Tensor::new(x.shape(), y)
}

/// Global-convolution kernel of a time-invariant channel:
/// `K_k = sum_n c[n] a_bar[n]^k b_bar[n]` for `k < len`.
pub fn lti_scan_kernel<T: Scalar>(a_bar: &[T], b_bar: &[T], c: &[T], len: usize) -> Result<Tensor<T>> {
    if len < 1 {
        return Err(Error::Domain("kernel length must be >= 1".into()));
    }
    if a_bar.len() != b_bar.len() || a_bar.len() != c.len() || a_bar.is_empty() {
        return Err(Error::dim("lti_scan_kernel: a_bar, b_bar, c must share a nonzero state size"));
    }
    let mut power: Vec<T> = b_bar.to_vec();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(c.iter().zip(&power).map(|(ci, p)| *ci * *p).sum());
        for (p, a) in power.iter_mut().zip(a_bar) {
            *p *= *a;
        }
    }
    Tensor::new(&[len], k)
}

/// Causal convolution `y_t = sum_{k<=t} K_k x_{t-k}`.
pub fn kernel_conv_apply<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() != 1 || x.shape() != kernel.shape() {
        return Err(Error::dim(format!(
            "kernel_conv_apply: x {:?} vs kernel {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    let (xs, ks) = (x.data(), kernel.data());
    let y = (0..xs.len())
        .map(|t| (0..=t).map(|k| ks[k] * xs[t - k]).sum())
        .collect();
    Tensor::new(x.shape(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    fn lti(len: usize, a_bar: f64, b_bar: f64) -> DiscreteParams<f64> {
        DiscreteParams {
            a_bar: Tensor::full(&[len, 1, 1], a_bar),
            b_bar: Tensor::full(&[len, 1, 1], b_bar),
        }
    }

    #[test]
    fn zoh_ln2() {
        let (ab, bb) = discretize_scalar(-1.0, 1.0, 2f64.ln()).unwrap();
        assert!((ab - 0.5).abs() < 1e-15);
        assert!((bb - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zoh_tiny_timescale() {
        let (ab, bb) = discretize_scalar(-1.0f64, 1.0, 1e-8).unwrap();
        assert!((ab - (1.0 - 1e-8)).abs() < 1e-15);
        assert!((bb - 1e-8).abs() < 1e-15);
        // strictly inside the Taylor branch
        let (ab, bb) = discretize_scalar(-1.0f64, 1.0, 1e-9).unwrap();
        assert!((ab - (1.0 - 1e-9)).abs() < 1e-16);
        assert!((bb - 1e-9).abs() < 1e-17);
    }

    #[test]
    fn zoh_closed_form() {
        let (ab, bb) = discretize_scalar(-2.0, 3.0, 0.5).unwrap();
        let e = (-1.0f64).exp();
        assert!((ab - e).abs() < 1e-15);
        assert!((bb - (1.0 - e) * 1.5).abs() < 1e-15);
        assert!((ab - 0.36788).abs() < 1e-5 && (bb - 0.94818).abs() < 1e-5);
    }

    #[test]
    fn zoh_rejects_nonpositive_timescale() {
        assert!(matches!(discretize_scalar(-1.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(discretize_scalar(-1.0, 1.0, -0.1), Err(Error::Domain(_))));
        assert!(matches!(discretize_scalar(1.0, 1.0, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn lti_recurrence_by_hand() {
        let c = Tensor::full(&[3, 1], 1.0);
        let d = Tensor::zeros(&[1]);
        let y = scan_discrete(&Tensor::full(&[3, 1], 1.0), &lti(3, 0.5, 0.5), &c, &d).unwrap();
        assert_eq!(y.data(), &[0.5, 0.75, 0.875]);
        let x = Tensor::from_f64(&[3, 1], &[1., 0., 0.]).unwrap();
        let y = scan_discrete(&x, &lti(3, 0.5, 0.5), &c, &d).unwrap();
        assert_eq!(y.data(), &[0.5, 0.25, 0.125]);
        let y = scan_discrete(&Tensor::zeros(&[3, 1]), &lti(3, 0.5, 0.5), &c, &d).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_examples() {
        let k = lti_scan_kernel(&[0.5], &[0.5], &[1.0], 3).unwrap();
        assert_eq!(k.data(), &[0.5, 0.25, 0.125]);
        assert_eq!(lti_scan_kernel(&[0.5], &[0.5], &[2.0], 1).unwrap().data(), &[1.0]);
        assert_eq!(
            lti_scan_kernel(&[0.0], &[0.5], &[2.0], 4).unwrap().data(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(lti_scan_kernel(&[0.5], &[0.5], &[1.0], 0), Err(Error::Domain(_))));
    }

    #[test]
    fn causal_convolution_examples() {
        let k = t1(&[0.5, 0.25, 0.125]);
        assert_eq!(kernel_conv_apply(&t1(&[1., 0., 0.]), &k).unwrap(), k);
        assert_eq!(kernel_conv_apply(&t1(&[1., 1., 1.]), &k).unwrap().data(), &[0.5, 0.75, 0.875]);
        let x = t1(&[0.3, -1.0, 2.0, 5.0]);
        assert_eq!(kernel_conv_apply(&x, &t1(&[1., 0., 0., 0.])).unwrap(), x);
        assert!(kernel_conv_apply(&x, &k).is_err());
    }

    #[test]
    fn fused_scan_matches_two_step_discretization() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[-1.0, -2.0, -0.5, -3.0]).unwrap();
        let b = Tensor::from_f64(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let c = Tensor::from_f64(&[3, 2], &[1.0, -1.0, 0.5, 0.25, 2.0, 0.0]).unwrap();
        let delta = Tensor::from_f64(&[3, 2], &[0.1, 0.01, 0.05, 0.2, 0.3, 0.02]).unwrap();
        let d_skip = Tensor::from_f64(&[2], &[1.0, 0.5]).unwrap();
        let x = Tensor::from_f64(&[3, 2], &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        let disc = discretize_zoh(&a, &b, &delta).unwrap();
        let two_step = scan_discrete(&x, &disc, &c, &d_skip).unwrap();
        let params = SsmParams::new(a, b, c, delta, d_skip).unwrap();
        let fused = selective_scan(&x, &params).unwrap();
        assert!(fused.max_abs_diff(&two_step) < 1e-14);
    }

    #[test]
    fn zero_input_zero_output() {
        let params = SsmParams::new(
            Tensor::full(&[4, 3], -1.0),
            Tensor::full(&[5, 3], 0.7),
            Tensor::full(&[5, 3], 0.3),
            Tensor::full(&[5, 4], 0.1),
            Tensor::full(&[4], 1.0),
        )
        .unwrap();
        let y = selective_scan(&Tensor::zeros(&[5, 4]), &params).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_validate_sign_constraints() {
        let build = |a: f64, dt: f64| {
            SsmParams::new(
                Tensor::full(&[1, 1], a),
                Tensor::full(&[2, 1], 1.0),
                Tensor::full(&[2, 1], 1.0),
                Tensor::full(&[2, 1], dt),
                Tensor::full(&[1], 0.0),
            )
        };
        assert!(build(-1.0, 0.1).is_ok());
        assert!(matches!(build(0.5, 0.1), Err(Error::Domain(_))));
        assert!(matches!(build(-1.0, 0.0), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn linear_in_input(
            xs in prop::collection::vec(-1.0f64..1.0, 12),
            alpha in -3.0f64..3.0,
            a in prop::collection::vec(-4.0f64..-0.1, 6),
            dt in prop::collection::vec(0.001f64..0.5, 12),
        ) {
            let params = SsmParams::new(
                Tensor::from_f64(&[2, 3], &a).unwrap(),
                Tensor::from_f64(&[6, 3], &xs[..18.min(xs.len())].iter().chain(xs.iter()).take(18).copied().collect::<Vec<_>>()).unwrap(),
                Tensor::full(&[6, 3], 0.7),
                Tensor::from_f64(&[6, 2], &dt).unwrap(),
                Tensor::full(&[2], 0.3),
            ).unwrap();
            let x = Tensor::from_f64(&[6, 2], &xs).unwrap();
            let y = selective_scan(&x, &params).unwrap();
            let ya = selective_scan(&x.scale(alpha), &params).unwrap();
            prop_assert!(ya.max_abs_diff(&y.scale(alpha)) < 1e-10);
        }

        #[test]
        fn state_stays_within_stability_bound(
            xs in prop::collection::vec(-1.0f64..1.0, 1..40),
            a_bar in 0.0f64..0.99,
            b_bar in -2.0f64..2.0,
        ) {
            let len = xs.len();
            let x = Tensor::from_f64(&[len, 1], &xs).unwrap();
            // with C = 1 and no skip the output is the state itself
            let y = scan_discrete(&x, &lti(len, a_bar, b_bar), &Tensor::full(&[len, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
            let max_in = xs.iter().map(|v| (v * b_bar).abs()).fold(0.0, f64::max);
            let bound = max_in / (1.0 - a_bar);
            prop_assert!(y.data().iter().all(|h| h.abs() <= bound + 1e-12));
        }
    }
}
