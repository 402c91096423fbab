use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::ConvBn;
use crate::ops::Activation;
use crate::param::ParamStore;
use crate::tensor::Scalar;

use super::Cost;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InResConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Hidden width is `expansion * in_channels`; 1 skips the expand conv.
    pub expansion: usize,
}

impl InResConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.stride) {
            return Err(Error::config(format!("InRes stride must be 1 or 2, got {}", self.stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.expansion == 0 {
            return Err(Error::config(format!("InRes sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn hidden(&self) -> usize {
        self.expansion * self.in_channels
    }

    pub fn cost(&self, h: usize, w: usize) -> Cost {
        let e = self.hidden();
        let (ho, wo) = (h / self.stride, w / self.stride);
        let expand = if self.expansion == 1 {
            Cost::default()
        } else {
            Cost::conv_bn(self.in_channels, e, 1, h, w)
        };
        expand + Cost::conv_bn(1, e, 3, ho, wo) + Cost::conv_bn(e, self.out_channels, 1, ho, wo)
    }
}

/// Pointwise expand, 3x3 depthwise (strided), pointwise project.
#[derive(Clone, Debug)]
pub struct InRes {
    pub config: InResConfig,
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub project: ConvBn,
}

impl InRes {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: InResConfig) -> Result<Self> {
        config.validate()?;
        let e = config.hidden();
        let silu = Some(Activation::Silu);
        let expand = if config.expansion == 1 {
            None
        } else {
            Some(ConvBn::pointwise(store, rng, &format!("{name}.expand"), config.in_channels, e, silu)?)
        };
        let depthwise = ConvBn::depthwise(store, rng, &format!("{name}.dw"), e, config.stride, silu)?;
        let project = ConvBn::pointwise(store, rng, &format!("{name}.project"), e, config.out_channels, None)?;
        Ok(Self {
            config,
            expand,
            depthwise,
            project,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(x).dims4()?;
        let s = self.config.stride;
        if c != self.config.in_channels || h % s != 0 || w % s != 0 {
            return Err(Error::dim(format!(
                "InRes expects {} channels with sides divisible by {s}, got {:?}",
                self.config.in_channels,
                g.value(x).shape()
            )));
        }
        let mut y = x;
        if let Some(expand) = &self.expand {
            y = expand.forward(g, y)?;
        }
        y = self.depthwise.forward(g, y)?;
        y = self.project.forward(g, y)?;
        if self.config.has_residual() {
            y = g.add(x, y)?;
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(config: InResConfig) -> (ParamStore<f32>, InRes) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = InRes::new(&mut store, &mut rng, "b", config).unwrap();
        (store, block)
    }

    #[test]
    fn zeroed_main_path_is_identity() {
        let (mut store, block) = build(InResConfig {
            in_channels: 4,
            out_channels: 4,
            stride: 1,
            expansion: 2,
        });
        for conv in [&block.expand.as_ref().unwrap().conv, &block.depthwise.conv, &block.project.conv] {
            store.set(conv.weight, Tensor::zeros(store.value(conv.weight).shape())).unwrap();
        }
        let mut g = Graph::with_params(&store, Mode::Infer);
        let data: Vec<f64> = (0..4 * 36).map(|i| (i as f64 * 0.1).cos()).collect();
        let x = g.constant(Tensor::from_f64(&[1, 4, 6, 6], &data).unwrap());
        let y = block.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn downsampling_shape() {
        let (store, block) = build(InResConfig {
            in_channels: 32,
            out_channels: 64,
            stride: 2,
            expansion: 2,
        });
        let mut g = Graph::with_params(&store, Mode::Infer);
        let x = g.constant(Tensor::full(&[1, 32, 112, 112], 0.1));
        let y = block.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 64, 56, 56]);
    }

    #[test]
    fn stride_two_never_has_residual() {
        for (cin, cout) in [(8, 8), (8, 16)] {
            let cfg = InResConfig {
                in_channels: cin,
                out_channels: cout,
                stride: 2,
                expansion: 2,
            };
            assert!(!cfg.has_residual());
        }
        let same = InResConfig {
            in_channels: 8,
            out_channels: 8,
            stride: 1,
            expansion: 1,
        };
        assert!(same.has_residual());
    }

    #[test]
    fn cost_matches_store() {
        for expansion in [1, 2] {
            let cfg = InResConfig {
                in_channels: 8,
                out_channels: 12,
                stride: 2,
                expansion,
            };
            let (store, _) = build(cfg);
            assert_eq!(cfg.cost(16, 16).params, store.count_trainable());
        }
    }

    #[test]
    fn odd_side_with_stride_two_rejected() {
        let (store, block) = build(InResConfig {
            in_channels: 2,
            out_channels: 2,
            stride: 2,
            expansion: 2,
        });
        let mut g = Graph::with_params(&store, Mode::Infer);
        let x = g.constant(Tensor::full(&[1, 2, 5, 5], 0.1));
        assert!(block.forward(&mut g, x).is_err());
    }
}
