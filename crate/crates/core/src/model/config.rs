use std::fmt;
use std::str::FromStr;

use crate::blocks::GmlgffConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Square input side.
    pub input_size: usize,
    pub in_channels: usize,
    pub stem_channels: usize,
    /// Expansion of the stride-1 block after the stem conv.
    pub stem_expansion: usize,
    /// Width of each GMLGFF stage; each stage opens with a stride-2 InRes.
    pub stage_widths: Vec<usize>,
    /// GMLGFF blocks per stage.
    pub stage_depths: Vec<usize>,
    /// Output of the last stride-2 InRes.
    pub final_width: usize,
    /// Pointwise head before pooling.
    pub head_width: usize,
    pub groups: usize,
    pub state_size: usize,
    pub dt_rank_divisor: usize,
    /// InRes expansion ratio.
    pub expansion: usize,
    pub enable_global: bool,
    pub enable_fusion: bool,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            in_channels: 3,
            stem_channels: 32,
            stem_expansion: 1,
            stage_widths: vec![64, 128],
            stage_depths: vec![1, 6],
            final_width: 256,
            head_width: 512,
            groups: 4,
            state_size: 8,
            dt_rank_divisor: 8,
            expansion: 2,
            enable_global: true,
            enable_fusion: true,
            num_classes: 2,
        }
    }
}

/// Named variants of the block wiring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Local branch only.
    Basic,
    /// Ungrouped VM branch, no fusion.
    Vm,
    /// Ungrouped VM branch with ECA fusion.
    VmFusion,
    G2,
    G3,
    G4,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Basic,
        Ablation::Vm,
        Ablation::VmFusion,
        Ablation::G2,
        Ablation::G3,
        Ablation::G4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Basic => "basic",
            Ablation::Vm => "vm",
            Ablation::VmFusion => "vm-fusion",
            Ablation::G2 => "g2",
            Ablation::G3 => "g3",
            Ablation::G4 => "g4",
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig) {
        let (groups, global, fusion) = match self {
            Ablation::Basic => (cfg.groups, false, false),
            Ablation::Vm => (1, true, false),
            Ablation::VmFusion => (1, true, true),
            Ablation::G2 => (2, true, true),
            Ablation::G3 => (3, true, true),
            Ablation::G4 => (4, true, true),
        };
        cfg.groups = groups;
        cfg.enable_global = global;
        cfg.enable_fusion = fusion;
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation {s:?} (basic, vm, vm-fusion, g2, g3, g4)")))
    }
}

impl ModelConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        ablation.apply(&mut self);
        self
    }

    /// Every width divided by `divisor` (floored at `groups`).
    pub fn scaled(&self, divisor: usize) -> Self {
        let d = divisor.max(1);
        let shrink = |w: usize| (w / d).max(self.groups).max(1);
        Self {
            stem_channels: shrink(self.stem_channels),
            stage_widths: self.stage_widths.iter().map(|&w| shrink(w)).collect(),
            final_width: shrink(self.final_width),
            head_width: shrink(self.head_width),
            ..self.clone()
        }
    }

    /// Total downsampling factor: stem conv, one per stage, final block.
    pub fn reduction(&self) -> usize {
        1 << (self.stage_widths.len() + 2)
    }

    pub fn block_config(&self, channels: usize) -> GmlgffConfig {
        GmlgffConfig {
            channels,
            groups: self.groups,
            enable_global: self.enable_global,
            enable_fusion: self.enable_fusion,
            state_size: self.state_size,
            dt_rank_divisor: self.dt_rank_divisor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_size", self.input_size),
            ("in_channels", self.in_channels),
            ("stem_channels", self.stem_channels),
            ("stem_expansion", self.stem_expansion),
            ("final_width", self.final_width),
            ("head_width", self.head_width),
            ("groups", self.groups),
            ("state_size", self.state_size),
            ("dt_rank_divisor", self.dt_rank_divisor),
            ("expansion", self.expansion),
            ("num_classes", self.num_classes),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.{k} must be >= 1")));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_depths.len() {
            return Err(Error::config(format!(
                "stage widths {:?} and depths {:?} must be non-empty and the same length",
                self.stage_widths, self.stage_depths
            )));
        }
        if !self.input_size.is_multiple_of(self.reduction()) {
            return Err(Error::config(format!(
                "input size {} must be divisible by {}",
                self.input_size,
                self.reduction()
            )));
        }
        if let Some(w) = self.stage_widths.iter().find(|&&w| w < self.groups) {
            return Err(Error::config(format!("stage width {w} smaller than group count {}", self.groups)));
        }
        for &w in &self.stage_widths {
            self.block_config(w).validate()?;
        }
        Ok(())
    }

    /// `key=value` pairs under the `model.` prefix, in a fixed order.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        [
            ("input_size", self.input_size.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("stem_channels", self.stem_channels.to_string()),
            ("stem_expansion", self.stem_expansion.to_string()),
            ("stage_widths", list(&self.stage_widths)),
            ("stage_depths", list(&self.stage_depths)),
            ("final_width", self.final_width.to_string()),
            ("head_width", self.head_width.to_string()),
            ("groups", self.groups.to_string()),
            ("state_size", self.state_size.to_string()),
            ("dt_rank_divisor", self.dt_rank_divisor.to_string()),
            ("expansion", self.expansion.to_string()),
            ("enable_global", self.enable_global.to_string()),
            ("enable_fusion", self.enable_fusion.to_string()),
            ("num_classes", self.num_classes.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect()
    }

    /// Sets one field from its key (without the `model.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn fmt::Display| Error::config(format!("model.{key}={value}: {e}"));
        let num = |v: &str| v.trim().parse::<usize>().map_err(|e| bad(&e));
        let flag = |v: &str| v.trim().parse::<bool>().map_err(|e| bad(&e));
        let list = |v: &str| v.split(',').map(num).collect::<Result<Vec<_>>>();
        match key {
            "input_size" => self.input_size = num(value)?,
            "in_channels" => self.in_channels = num(value)?,
            "stem_channels" => self.stem_channels = num(value)?,
            "stem_expansion" => self.stem_expansion = num(value)?,
            "stage_widths" => self.stage_widths = list(value)?,
            "stage_depths" => self.stage_depths = list(value)?,
            "final_width" => self.final_width = num(value)?,
            "head_width" => self.head_width = num(value)?,
            "groups" => self.groups = num(value)?,
            "state_size" => self.state_size = num(value)?,
            "dt_rank_divisor" => self.dt_rank_divisor = num(value)?,
            "expansion" => self.expansion = num(value)?,
            "enable_global" => self.enable_global = flag(value)?,
            "enable_fusion" => self.enable_fusion = flag(value)?,
            "num_classes" => self.num_classes = num(value)?,
            "ablation" => self.apply_ablation(value.trim().parse()?),
            _ => return Err(Error::config(format!("unknown key model.{key}"))),
        }
        Ok(())
    }

    fn apply_ablation(&mut self, a: Ablation) {
        a.apply(self);
    }
}
