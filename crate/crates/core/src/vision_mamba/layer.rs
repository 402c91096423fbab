use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::layers::ChannelLayerNorm;
use crate::ops::norm::LN_EPS;
use crate::param::ParamStore;
use crate::ssm::{S6Config, S6};
use crate::tensor::{Scalar, Tensor};

use super::scan::ScanDirection;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VmLayerConfig {
    pub channels: usize,
    pub state_size: usize,
    pub dt_rank: usize,
    /// Informational: the norms use [`LN_EPS`].
    pub norm_eps: f64,
}

impl VmLayerConfig {
    /// Timescale rank `ceil(channels / divisor)`.
    pub fn new(channels: usize, state_size: usize, dt_rank_divisor: usize) -> Self {
        Self {
            channels,
            state_size,
            dt_rank: channels.div_ceil(dt_rank_divisor.max(1)),
            norm_eps: LN_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.state_size == 0 || self.dt_rank == 0 {
            return Err(Error::config(format!("VM layer sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn s6(&self) -> S6Config {
        S6Config {
            d_inner: self.channels,
            d_state: self.state_size,
            dt_rank: self.dt_rank,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.s6().param_count() + 4 * self.channels
    }

    pub fn macs(&self, h: usize, w: usize) -> usize {
        4 * self.s6().macs(h * w)
    }
}

/// Pre-norm, four directional S6 scans, sum-merge, post-norm, residual.
#[derive(Clone, Debug)]
pub struct VmLayer {
    pub config: VmLayerConfig,
    pub norm_in: ChannelLayerNorm,
    /// One scan per direction, in [`ScanDirection::ALL`] order.
    pub scans: [S6; 4],
    pub norm_out: ChannelLayerNorm,
}

impl VmLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        config: VmLayerConfig,
    ) -> Result<Self> {
        config.validate()?;
        let norm_in = ChannelLayerNorm::new(store, &format!("{name}.norm_in"), config.channels)?;
        let mut make = |dir: ScanDirection| S6::new(store, rng, &format!("{name}.{}", dir.name()), config.s6());
        let scans = [
            make(ScanDirection::RowForward)?,
            make(ScanDirection::ColForward)?,
            make(ScanDirection::RowReverse)?,
            make(ScanDirection::ColReverse)?,
        ];
        let norm_out = ChannelLayerNorm::new(store, &format!("{name}.norm_out"), config.channels)?;
        Ok(Self {
            config,
            norm_in,
            scans,
            norm_out,
        })
    }

    /// `[n, c, h, w]` -> same shape.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != self.config.channels {
            return Err(Error::dim(format!(
                "VM layer built for {} channels, got {c}",
                self.config.channels
            )));
        }
        let normed = self.norm_in.forward(g, x)?;
        let mut outs = Vec::with_capacity(4);
        for (s6, dir) in self.scans.iter().zip(ScanDirection::ALL) {
            let seq = g.cross_scan(normed, dir)?;
            outs.push(s6.forward(g, seq)?);
        }
        let merged = g.cross_merge([outs[0], outs[1], outs[2], outs[3]], h, w)?;
        let y = self.norm_out.forward(g, merged)?;
        g.add(x, y)
    }

    /// Single `[c, h, w]` map in inference mode.
    pub fn forward_map<T: Scalar>(&self, store: &ParamStore<T>, fmap: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = fmap.dims3()?;
        let mut g = Graph::with_params(store, Mode::Infer);
        let x = g.constant(fmap.clone().reshape(&[1, c, h, w])?);
        let y = self.forward(&mut g, x)?;
        g.value(y).clone().reshape(&[c, h, w])
    }
}
