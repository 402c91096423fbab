use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Gmlgff, InRes, InResConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::layers::{ConvBn, Linear};
use crate::ops::{Activation, Conv2dSpec};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

use super::config::ModelConfig;

#[derive(Clone, Debug)]
pub struct Stage {
    pub down: InRes,
    pub blocks: Vec<Gmlgff>,
}

/// Conv stem, stride-1 InRes, GMLGFF stages (each opened by a stride-2
/// InRes), a final stride-2 InRes, pointwise head, pooling, classifier.
#[derive(Clone, Debug)]
pub struct MpoxMamba<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub stem: ConvBn,
    pub stem_block: InRes,
    pub stages: Vec<Stage>,
    pub final_down: InRes,
    pub head: ConvBn,
    pub classifier: Linear,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Head feature map, `[n, head_width, s/16, s/16]` at the default depth.
    pub features: Var,
    pub logits: Var,
}

impl<T: Scalar> MpoxMamba<T> {
    /// Builds and initializes every parameter from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let silu = Some(Activation::Silu);
        let stem = ConvBn::new(
            &mut store,
            &mut rng,
            "stem",
            config.in_channels,
            config.stem_channels,
            3,
            Conv2dSpec::new(2, 1, 1),
            silu,
        )?;
        let stem_block = InRes::new(
            &mut store,
            &mut rng,
            "stem_block",
            InResConfig {
                in_channels: config.stem_channels,
                out_channels: config.stem_channels,
                stride: 1,
                expansion: config.stem_expansion,
            },
        )?;
        let mut stages = Vec::new();
        let mut width = config.stem_channels;
        for (i, (&w, &depth)) in config.stage_widths.iter().zip(&config.stage_depths).enumerate() {
            let name = format!("stage{}", i + 2);
            let down = InRes::new(&mut store, &mut rng, &format!("{name}.down"), down_config(width, w, &config))?;
            let blocks = (0..depth)
                .map(|b| Gmlgff::new(&mut store, &mut rng, &format!("{name}.block{b}"), config.block_config(w)))
                .collect::<Result<_>>()?;
            stages.push(Stage { down, blocks });
            width = w;
        }
        let final_down = InRes::new(
            &mut store,
            &mut rng,
            "final_down",
            down_config(width, config.final_width, &config),
        )?;
        let head = ConvBn::pointwise(&mut store, &mut rng, "head", config.final_width, config.head_width, silu)?;
        let classifier = Linear::new(&mut store, &mut rng, "classifier", config.head_width, config.num_classes, true)?;
        Ok(Self {
            config,
            store,
            stem,
            stem_block,
            stages,
            final_down,
            head,
            classifier,
        })
    }

    pub fn count_params(&self) -> usize {
        self.store.count_trainable()
    }

    /// Records the forward pass of an `[n, c, s, s]` batch on `g`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<ForwardOutput> {
        let shape = g.value(x).shape();
        let s = self.config.input_size;
        if shape.len() != 4 || shape[1] != self.config.in_channels || shape[2] != s || shape[3] != s {
            return Err(Error::dim(format!(
                "model expects [n, {}, {s}, {s}] input, got {shape:?}",
                self.config.in_channels
            )));
        }
        let mut y = self.stem.forward(g, x)?;
        y = self.stem_block.forward(g, y)?;
        for stage in &self.stages {
            y = stage.down.forward(g, y)?;
            for block in &stage.blocks {
                y = block.forward(g, y)?;
            }
        }
        y = self.final_down.forward(g, y)?;
        let features = self.head.forward(g, y)?;
        let pooled = g.global_avg_pool(features)?;
        let logits = self.classifier.forward(g, pooled)?;
        Ok(ForwardOutput { features, logits })
    }

    /// Inference-mode logits `[n, num_classes]`.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::with_params(&self.store, Mode::Infer);
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out.logits).clone())
    }

    /// Shapes `[c, h, w]` after each top-level layer for a single input.
    pub fn trace_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let s = self.config.input_size;
        let mut g = Graph::with_params(&self.store, Mode::Infer);
        let x = g.constant(Tensor::zeros(&[1, self.config.in_channels, s, s]));
        let mut rows = Vec::new();
        let mut record = |name: String, g: &Graph<'_, T>, v: Var| rows.push((name, g.value(v).shape()[1..].to_vec()));
        let mut y = self.stem.forward(&mut g, x)?;
        record("stem".into(), &g, y);
        y = self.stem_block.forward(&mut g, y)?;
        record("stem_block".into(), &g, y);
        for (i, stage) in self.stages.iter().enumerate() {
            y = stage.down.forward(&mut g, y)?;
            record(format!("stage{}.down", i + 2), &g, y);
            for block in &stage.blocks {
                y = block.forward(&mut g, y)?;
            }
            record(format!("stage{}", i + 2), &g, y);
        }
        y = self.final_down.forward(&mut g, y)?;
        record("final_down".into(), &g, y);
        y = self.head.forward(&mut g, y)?;
        record("head".into(), &g, y);
        Ok(rows)
    }
}

pub(crate) fn down_config(cin: usize, cout: usize, config: &ModelConfig) -> InResConfig {
    InResConfig {
        in_channels: cin,
        out_channels: cout,
        stride: 2,
        expansion: config.expansion,
    }
}
