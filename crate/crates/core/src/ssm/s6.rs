//! Selective (input-dependent) state-space layer.
//!
//! Per step: `delta = softplus(dt_up(dt_down(x)))`, `B = b_proj(x)`,
//! `C = c_proj(x)`, `A = -exp(a_log)`, followed by the fused ZOH scan.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::layers::Linear;
use crate::ops::activation::softplus_inverse;
use crate::ops::Activation;
use crate::param::{uniform, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct S6Config {
    pub d_inner: usize,
    pub d_state: usize,
    /// Rank of the low-rank timescale projection.
    pub dt_rank: usize,
}

/// Initial timescales are drawn log-uniformly from this range.
pub const DT_INIT_RANGE: (f64, f64) = (1e-3, 0.1);

impl S6Config {
    pub fn validate(&self) -> Result<()> {
        if self.d_inner == 0 || self.d_state == 0 || self.dt_rank == 0 {
            return Err(Error::config(format!("S6 sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Trainable element count.
    pub fn param_count(&self) -> usize {
        let (d, n, r) = (self.d_inner, self.d_state, self.dt_rank);
        2 * r * d + d + 2 * n * d + n * d + d
    }

    /// Multiply-accumulates over a sequence of `len` steps: projections plus
    /// three per state lane per step (decay, input, readout).
    pub fn macs(&self, len: usize) -> usize {
        let (d, n, r) = (self.d_inner, self.d_state, self.dt_rank);
        len * (2 * r * d + 2 * n * d) + 3 * len * d * n
    }
}

#[derive(Clone, Debug)]
pub struct S6 {
    pub config: S6Config,
    pub dt_down: Linear,
    pub dt_up: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub a_log: ParamId,
    pub d_skip: ParamId,
}

impl S6 {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: S6Config) -> Result<Self> {
        config.validate()?;
        let S6Config {
            d_inner: d,
            d_state: n,
            dt_rank: r,
        } = config;
        let dt_down = Linear::new(store, rng, &format!("{name}.dt_down"), d, r, false)?;
        let dt_up_weight = store.add(
            format!("{name}.dt_up.weight"),
            uniform(&[d, r], 1.0 / (r as f64).sqrt(), rng),
            true,
        )?;
        let (lo, hi) = (DT_INIT_RANGE.0.ln(), DT_INIT_RANGE.1.ln());
        let dt_bias: Vec<T> = (0..d)
            .map(|_| T::from_f64(softplus_inverse(rng.gen_range(lo..hi).exp())))
            .collect();
        let dt_up_bias = store.add(format!("{name}.dt_up.bias"), Tensor::new(&[d], dt_bias)?, true)?;
        let b_proj = Linear::new(store, rng, &format!("{name}.b_proj"), d, n, false)?;
        let c_proj = Linear::new(store, rng, &format!("{name}.c_proj"), d, n, false)?;
        let a_log: Vec<T> = (0..d)
            .flat_map(|_| (1..=n).map(|k| T::from_f64((k as f64).ln())))
            .collect();
        let a_log = store.add(format!("{name}.a_log"), Tensor::new(&[d, n], a_log)?, true)?;
        let d_skip = store.add(format!("{name}.d_skip"), Tensor::full(&[d], T::one()), true)?;
        Ok(Self {
            config,
            dt_down,
            dt_up: Linear {
                weight: dt_up_weight,
                bias: Some(dt_up_bias),
            },
            b_proj,
            c_proj,
            a_log,
            d_skip,
        })
    }

    /// `x`: `[n, len, d_inner]` -> same shape.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let low = self.dt_down.forward(g, x)?;
        let pre = self.dt_up.forward(g, low)?;
        let delta = g.activation(pre, Activation::Softplus)?;
        let b = self.b_proj.forward(g, x)?;
        let c = self.c_proj.forward(g, x)?;
        let a_log = g.param(self.a_log)?;
        let a = g.neg_exp(a_log)?;
        let d_skip = g.param(self.d_skip)?;
        g.selective_scan(x, delta, a, b, c, d_skip)
    }

    /// Runs a single `[len, d_inner]` sequence outside of any training graph.
    pub fn forward_sequence<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (len, d) = x.dims2()?;
        let mut g = Graph::with_params(store, Mode::Infer);
        let xv = g.constant(x.clone().reshape(&[1, len, d])?);
        let y = self.forward(&mut g, xv)?;
        g.value(y).clone().reshape(&[len, d])
    }
}
