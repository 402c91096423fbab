//! Analytic parameter and multiply-accumulate accounting.
//!
//! Counted: convolution and linear weights/MACs, BN and LN affine terms, the
//! selective-scan projections and state updates, ECA. Not counted: BN/LN
//! normalization arithmetic, activations, pooling, additions.

use crate::blocks::{Cost, InResConfig};
use crate::error::Result;

use super::config::ModelConfig;
use super::network::down_config;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BudgetRow {
    pub name: String,
    /// Output `[c, h, w]`.
    pub output: [usize; 3],
    pub cost: Cost,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Budget {
    pub rows: Vec<BudgetRow>,
}

impl Budget {
    pub fn params(&self) -> usize {
        self.rows.iter().map(|r| r.cost.params).sum()
    }

    pub fn macs(&self) -> usize {
        self.rows.iter().map(|r| r.cost.macs).sum()
    }

    /// Two floating-point operations per multiply-accumulate.
    pub fn flops(&self) -> usize {
        2 * self.macs()
    }
}

/// Per-layer budget of `cfg` at its configured input size.
pub fn budget(cfg: &ModelConfig) -> Result<Budget> {
    budget_at(cfg, cfg.input_size)
}

pub fn budget_at(cfg: &ModelConfig, input_size: usize) -> Result<Budget> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut side = input_size / 2;
    let mut push = |name: String, c: usize, side: usize, cost: Cost| {
        rows.push(BudgetRow {
            name,
            output: [c, side, side],
            cost,
        })
    };
    push(
        "stem".into(),
        cfg.stem_channels,
        side,
        Cost::conv_bn(cfg.in_channels, cfg.stem_channels, 3, side, side),
    );
    let stem_block = InResConfig {
        in_channels: cfg.stem_channels,
        out_channels: cfg.stem_channels,
        stride: 1,
        expansion: cfg.stem_expansion,
    };
    push("stem_block".into(), cfg.stem_channels, side, stem_block.cost(side, side));
    let mut width = cfg.stem_channels;
    for (i, (&w, &depth)) in cfg.stage_widths.iter().zip(&cfg.stage_depths).enumerate() {
        let down = down_config(width, w, cfg);
        let cost = down.cost(side, side);
        side /= 2;
        push(format!("stage{}.down", i + 2), w, side, cost);
        let block = cfg.block_config(w).cost(side, side)?;
        let blocks = (0..depth).map(|_| block).sum();
        push(format!("stage{} x{depth}", i + 2), w, side, blocks);
        width = w;
    }
    let cost = down_config(width, cfg.final_width, cfg).cost(side, side);
    side /= 2;
    push("final_down".into(), cfg.final_width, side, cost);
    push(
        "head".into(),
        cfg.head_width,
        side,
        Cost::conv_bn(cfg.final_width, cfg.head_width, 1, side, side),
    );
    let fc = cfg.head_width * cfg.num_classes;
    push("classifier".into(), cfg.num_classes, 1, Cost::new(fc + cfg.num_classes, fc));
    Ok(Budget { rows })
}

/// Floating-point operations (2 x MACs) at a square input of `input_size`.
pub fn count_flops(cfg: &ModelConfig, input_size: usize) -> Result<usize> {
    Ok(budget_at(cfg, input_size)?.flops())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, MpoxMamba};

    #[test]
    fn conv_formula_example() {
        // 3x3, 1 -> 1 channel, 4x4 output
        assert_eq!(2 * Cost::conv_bn(1, 1, 3, 4, 4).macs, 288);
    }

    #[test]
    fn default_shape_ladder() {
        let b = budget(&ModelConfig::default()).unwrap();
        let outs: Vec<[usize; 3]> = b.rows.iter().map(|r| r.output).collect();
        assert_eq!(outs[0], [32, 112, 112]);
        assert_eq!(outs[1], [32, 112, 112]);
        assert_eq!(outs[2], [64, 56, 56]);
        assert_eq!(outs[4], [128, 28, 28]);
        assert_eq!(outs[6], [256, 14, 14]);
        assert_eq!(outs[7], [512, 14, 14]);
    }

    #[test]
    fn analytic_params_match_built_models() {
        for ablation in Ablation::ALL {
            let cfg = ModelConfig {
                input_size: 32,
                ..ModelConfig::default().with_ablation(ablation).scaled(8)
            };
            let m = MpoxMamba::<f32>::build(cfg.clone(), 0).unwrap();
            assert_eq!(budget(&cfg).unwrap().params(), m.count_params(), "{ablation}");
        }
        let full = MpoxMamba::<f32>::build(ModelConfig::default(), 0).unwrap();
        assert_eq!(budget(&ModelConfig::default()).unwrap().params(), full.count_params());
    }
}
