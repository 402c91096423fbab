use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::ConvBn;
use crate::ops::Activation;
use crate::param::ParamStore;
use crate::tensor::Scalar;
use crate::vision_mamba::{VmLayer, VmLayerConfig};

use super::eca::{eca_kernel_size, Eca};
use super::Cost;

/// Channel split into `groups` contiguous parts whose sizes differ by at most
/// one; the remainder goes one each to the last groups.
pub fn split_sizes(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels < groups {
        return Err(Error::config(format!(
            "cannot split {channels} channels into {groups} groups"
        )));
    }
    let (base, rem) = (channels / groups, channels % groups);
    Ok((0..groups).map(|i| base + usize::from(i >= groups - rem)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GmlgffConfig {
    pub channels: usize,
    pub groups: usize,
    pub enable_global: bool,
    pub enable_fusion: bool,
    pub state_size: usize,
    /// Each branch uses timescale rank `ceil(width / dt_rank_divisor)`.
    pub dt_rank_divisor: usize,
}

impl GmlgffConfig {
    pub fn validate(&self) -> Result<()> {
        split_sizes(self.channels, self.groups)?;
        if self.enable_fusion && !self.enable_global {
            return Err(Error::config("fusion requires the global branch"));
        }
        if self.state_size == 0 || self.dt_rank_divisor == 0 {
            return Err(Error::config("state size and rank divisor must be >= 1"));
        }
        Ok(())
    }

    pub fn branch_configs(&self) -> Result<Vec<VmLayerConfig>> {
        Ok(split_sizes(self.channels, self.groups)?
            .into_iter()
            .map(|c| VmLayerConfig::new(c, self.state_size, self.dt_rank_divisor))
            .collect())
    }

    pub fn cost(&self, h: usize, w: usize) -> Result<Cost> {
        let c = self.channels;
        let mut total = local_cost(c, h, w);
        if self.enable_global {
            for vm in self.branch_configs()? {
                total += Cost::new(vm.param_count(), vm.macs(h, w));
            }
        }
        if self.enable_fusion {
            let k = eca_kernel_size(c);
            total += Cost::new(k, k * c) + Cost::conv_bn(2 * c, c, 1, h, w);
        }
        Ok(total)
    }
}

fn local_cost(c: usize, h: usize, w: usize) -> Cost {
    Cost::conv_bn(1, c, 3, h, w) + Cost::conv_bn(c, c, 1, h, w)
}

/// Depthwise-separable local branch: DW 3x3, BN, SiLU, PW, BN, SiLU.
#[derive(Clone, Debug)]
pub struct LocalRepresentation {
    pub depthwise: ConvBn,
    pub pointwise: ConvBn,
}

impl LocalRepresentation {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Result<Self> {
        let silu = Some(Activation::Silu);
        Ok(Self {
            depthwise: ConvBn::depthwise(store, rng, &format!("{name}.dw"), channels, 1, silu)?,
            pointwise: ConvBn::pointwise(store, rng, &format!("{name}.pw"), channels, channels, silu)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(g, x)?;
        self.pointwise.forward(g, y)
    }
}

/// Local branch, channel-grouped VM global branch, ECA-gated fusion, shortcut.
#[derive(Clone, Debug)]
pub struct Gmlgff {
    pub config: GmlgffConfig,
    pub local: LocalRepresentation,
    /// `(first channel, VM layer)` per group.
    pub branches: Vec<(usize, VmLayer)>,
    pub eca: Option<Eca>,
    pub fuse: Option<ConvBn>,
}

impl Gmlgff {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: GmlgffConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let local = LocalRepresentation::new(store, rng, &format!("{name}.local"), c)?;
        let mut branches = Vec::new();
        if config.enable_global {
            let mut start = 0;
            for (i, vm) in config.branch_configs()?.into_iter().enumerate() {
                let layer = VmLayer::new(store, rng, &format!("{name}.global.vm{i}"), vm)?;
                branches.push((start, layer));
                start += vm.channels;
            }
        }
        let (eca, fuse) = if config.enable_fusion {
            (
                Some(Eca::new(store, rng, &format!("{name}.eca"), c)?),
                Some(ConvBn::pointwise(store, rng, &format!("{name}.fuse"), 2 * c, c, Some(Activation::Silu))?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            local,
            branches,
            eca,
            fuse,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let c = g.value(x).dims4()?.1;
        if c != self.config.channels {
            return Err(Error::dim(format!(
                "GMLGFF built for {} channels, got {c}",
                self.config.channels
            )));
        }
        let local = self.local.forward(g, x)?;
        if self.branches.is_empty() {
            return g.add(x, local);
        }
        let global = if let [(_, vm)] = self.branches.as_slice() {
            vm.forward(g, local)?
        } else {
            let mut parts = Vec::with_capacity(self.branches.len());
            for (start, vm) in &self.branches {
                let part = g.narrow_channels(local, *start, vm.config.channels)?;
                parts.push(vm.forward(g, part)?);
            }
            g.concat_channels(&parts)?
        };
        let (Some(eca), Some(fuse)) = (&self.eca, &self.fuse) else {
            return g.add(x, global);
        };
        let gated = eca.forward(g, local)?;
        let both = g.concat_channels(&[gated, global])?;
        let fused = fuse.forward(g, both)?;
        g.add(x, fused)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(channels: usize, groups: usize, global: bool, fusion: bool) -> GmlgffConfig {
        GmlgffConfig {
            channels,
            groups,
            enable_global: global,
            enable_fusion: fusion,
            state_size: 4,
            dt_rank_divisor: 8,
        }
    }

    fn input(c: usize, hw: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..2 * c * hw * hw).map(|i| ((i * 31 % 17) as f64 - 8.0) / 8.0).collect();
        Tensor::from_f64(&[2, c, hw, hw], &data).unwrap()
    }

    fn build(config: GmlgffConfig) -> (ParamStore<f64>, Gmlgff) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let block = Gmlgff::new(&mut store, &mut rng, "blk", config).unwrap();
        (store, block)
    }

    #[test]
    fn split_rules() {
        assert_eq!(split_sizes(64, 4).unwrap(), vec![16; 4]);
        assert_eq!(split_sizes(64, 3).unwrap(), vec![21, 21, 22]);
        assert_eq!(split_sizes(128, 3).unwrap(), vec![42, 43, 43]);
        assert_eq!(split_sizes(10, 4).unwrap(), vec![2, 2, 3, 3]);
        assert!(split_sizes(3, 4).is_err());
    }

    #[test]
    fn fusion_requires_global() {
        assert!(cfg(8, 2, false, true).validate().is_err());
    }

    #[test]
    fn shape_preserved_for_every_group_count() {
        for groups in 1..=4 {
            for (global, fusion) in [(false, false), (true, false), (true, true)] {
                let (store, block) = build(cfg(8, groups, global, fusion));
                let mut g = Graph::with_params(&store, Mode::Train);
                let x = g.constant(input(8, 4));
                let y = block.forward(&mut g, x).unwrap();
                assert_eq!(g.value(y).shape(), &[2, 8, 4, 4]);
            }
        }
    }

    #[test]
    fn basic_variant_is_x_plus_local() {
        let (store, block) = build(cfg(6, 2, false, false));
        let mut g = Graph::with_params(&store, Mode::Infer);
        let x = g.constant(input(6, 5));
        let y = block.forward(&mut g, x).unwrap();
        let l = block.local.forward(&mut g, x).unwrap();
        let oracle = g.value(x).zip_map(g.value(l), |a, b| a + b).unwrap();
        assert_eq!(g.value(y), &oracle);
    }

    #[test]
    fn zeroed_fusion_conv_leaves_shortcut() {
        let (mut store, block) = build(cfg(8, 4, true, true));
        let w = block.fuse.as_ref().unwrap().conv.weight;
        store.set(w, Tensor::zeros(store.value(w).shape())).unwrap();
        for mode in [Mode::Infer, Mode::Train] {
            let mut g = Graph::with_params(&store, mode);
            let x = g.constant(input(8, 4));
            let y = block.forward(&mut g, x).unwrap();
            assert_eq!(g.value(y), g.value(x));
        }
    }

    #[test]
    fn cost_matches_store() {
        for groups in 1..=4 {
            for (global, fusion) in [(false, false), (true, false), (true, true)] {
                let config = cfg(12, groups, global, fusion);
                let (store, _) = build(config);
                assert_eq!(config.cost(7, 7).unwrap().params, store.count_trainable());
            }
        }
    }

    #[test]
    fn global_params_shrink_with_more_groups() {
        let counts: Vec<usize> = (1..=4)
            .map(|g| cfg(64, g, true, false).cost(1, 1).unwrap().params)
            .collect();
        assert!(counts.windows(2).all(|p| p[0] > p[1]), "{counts:?}");
    }
}
