//! Sequential selective-scan kernel over raw slices, with its reverse pass.
//!
//! Layouts: `x`, `delta`, `dy`: `[len, d_inner]`; `a`: `[d_inner, d_state]`;
//! `b`, `c`: `[len, d_state]`; `d_skip`: `[d_inner]`; saved states:
//! `[len, d_inner, d_state]`. Each `(d, n)` lane is an independent first-order
//! recurrence along `len`.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::{zoh_input_factor, TAYLOR_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
}

/// Gradients of one scan with respect to each of its inputs.
#[derive(Clone, Debug)]
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d_skip: Vec<T>,
}

/// Below this `|delta * a|`, `d/da` of the input factor uses a series.
const SERIES_THRESHOLD: f64 = 1e-3;

/// `d/da [expm1(delta a)/a] = delta^2 * phi'(z)`, `phi(z) = expm1(z)/z`.
#[inline]
fn input_factor_da<T: Scalar>(delta: T, a: T) -> T {
    let z = delta * a;
    let dphi = if z.abs() < T::from_f64(SERIES_THRESHOLD) {
        let half = T::from_f64(0.5);
        half + z * (T::from_f64(1.0 / 3.0) + z * (T::from_f64(0.125) + z * T::from_f64(1.0 / 30.0)))
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    };
    delta * delta * dphi
}

/// `d/d delta` of the input factor.
#[inline]
fn input_factor_ddelta<T: Scalar>(delta: T, a: T) -> T {
    let z = delta * a;
    if z.abs() < T::from_f64(TAYLOR_THRESHOLD) {
        T::one() + z
    } else {
        z.exp()
    }
}

fn validate<T: Scalar>(dims: ScanDims, delta: &[T], a: &[T]) -> Result<()> {
    if let Some(t) = delta.iter().position(|v| *v <= T::zero() || !v.is_finite()) {
        return Err(Error::Domain(format!(
            "timescale at step {} must be positive, got {}",
            t / dims.d_inner,
            delta[t]
        )));
    }
    if let Some(i) = a.iter().position(|v| *v > T::zero() || !v.is_finite()) {
        return Err(Error::Domain(format!("state matrix entry {i} is {}, must be <= 0", a[i])));
    }
    Ok(())
}

/// Runs the recurrence. When `states` is given it receives every `h_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_forward<T: Scalar>(
    dims: ScanDims,
    x: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d_skip: &[T],
    mut states: Option<&mut [T]>,
) -> Result<Vec<T>> {
    let ScanDims {
        len,
        d_inner,
        d_state,
    } = dims;
    debug_assert_eq!(x.len(), len * d_inner);
    debug_assert_eq!(a.len(), d_inner * d_state);
    validate(dims, delta, a)?;
    let mut h = vec![T::zero(); d_inner * d_state];
    let mut y = vec![T::zero(); len * d_inner];
    for t in 0..len {
        let bt = &b[t * d_state..][..d_state];
        let ct = &c[t * d_state..][..d_state];
        let mut finite = true;
        for d in 0..d_inner {
            let xv = x[t * d_inner + d];
            let dt = delta[t * d_inner + d];
            let ad = &a[d * d_state..][..d_state];
            let hd = &mut h[d * d_state..][..d_state];
            let mut acc = d_skip[d] * xv;
            for n in 0..d_state {
                let a_bar = (dt * ad[n]).exp();
                let b_bar = zoh_input_factor(dt, ad[n]) * bt[n];
                hd[n] = a_bar * hd[n] + b_bar * xv;
                acc += ct[n] * hd[n];
            }
            finite &= acc.is_finite();
            y[t * d_inner + d] = acc;
        }
        if !finite || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("selective scan state diverged at step {t}")));
        }
        if let Some(s) = states.as_deref_mut() {
            s[t * d_inner * d_state..][..d_inner * d_state].copy_from_slice(&h);
        }
    }
    Ok(y)
}

/// Reverse pass given the states saved by [`scan_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_backward<T: Scalar>(
    dims: ScanDims,
    x: &[T],
    delta: &[T],
    a: &[T],
    b: &[T],
    c: &[T],
    d_skip: &[T],
    states: &[T],
    dy: &[T],
) -> ScanGrads<T> {
    let ScanDims {
        len,
        d_inner,
        d_state,
    } = dims;
    let plane = d_inner * d_state;
    let mut g = ScanGrads {
        x: vec![T::zero(); len * d_inner],
        delta: vec![T::zero(); len * d_inner],
        a: vec![T::zero(); plane],
        b: vec![T::zero(); len * d_state],
        c: vec![T::zero(); len * d_state],
        d_skip: vec![T::zero(); d_inner],
    };
    // gradient reaching h_t through h_{t+1}
    let mut carry = vec![T::zero(); plane];
    for t in (0..len).rev() {
        let bt = &b[t * d_state..][..d_state];
        let ct = &c[t * d_state..][..d_state];
        let h_t = &states[t * plane..][..plane];
        for d in 0..d_inner {
            let i = t * d_inner + d;
            let (xv, dt, gy) = (x[i], delta[i], dy[i]);
            g.d_skip[d] += gy * xv;
            let mut dx = gy * d_skip[d];
            let mut ddelta = T::zero();
            for n in 0..d_state {
                let j = d * d_state + n;
                let an = a[j];
                let h_prev = if t > 0 { states[(t - 1) * plane + j] } else { T::zero() };
                g.c[t * d_state + n] += gy * h_t[j];
                let gh = gy * ct[n] + carry[j];
                let a_bar = (dt * an).exp();
                let factor = zoh_input_factor(dt, an);
                let g_abar = gh * h_prev;
                let g_bbar = gh * xv;
                dx += gh * factor * bt[n];
                g.b[t * d_state + n] += g_bbar * factor;
                let g_factor = g_bbar * bt[n];
                ddelta += g_abar * a_bar * an + g_factor * input_factor_ddelta(dt, an);
                g.a[j] += g_abar * a_bar * dt + g_factor * input_factor_da(dt, an);
                carry[j] = gh * a_bar;
            }
            g.x[i] = dx;
            g.delta[i] = ddelta;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_factor_derivatives_match_finite_differences() {
        let h = 1e-6;
        for &(dt, a) in &[(0.1, -1.0), (0.5, -3.0), (1e-4, -2.0), (0.02, -0.01)] {
            let fd_a = (zoh_input_factor(dt, a + h) - zoh_input_factor(dt, a - h)) / (2.0 * h);
            let fd_dt = (zoh_input_factor(dt + h * dt, a) - zoh_input_factor(dt - h * dt, a)) / (2.0 * h * dt);
            let an_a: f64 = input_factor_da(dt, a);
            let an_dt: f64 = input_factor_ddelta(dt, a);
            assert!((an_a - fd_a).abs() <= 1e-7 * an_a.abs().max(1e-3), "{dt} {a}: {an_a} vs {fd_a}");
            assert!((an_dt - fd_dt).abs() <= 1e-7, "{dt} {a}: {an_dt} vs {fd_dt}");
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_the_switch() {
        let dt = 1.0;
        let below: f64 = input_factor_da(dt, -0.999e-3);
        let above: f64 = input_factor_da(dt, -1.001e-3);
        assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn zero_state_matrix_is_a_running_sum() {
        let dims = ScanDims {
            len: 4,
            d_inner: 1,
            d_state: 1,
        };
        let y = scan_forward(dims, &[1.0, 2.0, 3.0, 4.0], &[1.0; 4], &[-0.0], &[1.0; 4], &[1.0; 4], &[0.0], None)
            .unwrap();
        assert_eq!(y, vec![1.0, 3.0, 6.0, 10.0]);
    }

    #[test]
    fn positive_state_matrix_rejected() {
        let dims = ScanDims {
            len: 1,
            d_inner: 1,
            d_state: 1,
        };
        let err = scan_forward(dims, &[1.0], &[0.1], &[0.5], &[1.0], &[1.0], &[0.0], None).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn divergence_reports_step() {
        let dims = ScanDims {
            len: 3,
            d_inner: 1,
            d_state: 1,
        };
        let err = scan_forward(dims, &[1.0, f64::MAX, 1.0], &[0.1; 3], &[-1e-12], &[1e300; 3], &[1.0; 3], &[0.0], None)
            .unwrap_err();
        assert!(err.to_string().contains("step 1"), "{err}");
    }
}
