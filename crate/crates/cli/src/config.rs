//! Run configuration: flat `key = value` text.
//!
//! ```text
//! # comment
//! model.groups = 4
//! train.epochs = 100
//! data.root = /data/skin
//! ```
//!
//! Keys are unique; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mpoxmamba::model::ModelConfig;
use mpoxmamba::train::TrainConfig;
use mpoxmamba::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got {s:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// `train.seed` doubles as the model initialization seed.
    pub train: TrainConfig,
    pub data_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data_root: None,
            output_dir: PathBuf::from("runs"),
            precision: Precision::F32,
        }
    }
}

/// Every accepted key other than the `model.*` family.
pub const RUN_KEYS: [&str; 13] = [
    "train.epochs",
    "train.batch_size",
    "train.folds",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "train.seed",
    "data.root",
    "output.dir",
    "run.precision",
    "run.seed",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            context: format!("reading config {}", path.display()),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| v.parse::<usize>().map_err(|e| Error::Config(format!("{key}={v}: {e}")));
        let real = |v: &str| v.parse::<f64>().map_err(|e| Error::Config(format!("{key}={v}: {e}")));
        if let Some(field) = key.strip_prefix("model.") {
            return self.model.set(field, value);
        }
        let o = &mut self.train.optimizer;
        match key {
            "train.epochs" => self.train.epochs = num(value)?,
            "train.batch_size" => self.train.batch_size = num(value)?,
            "train.folds" => self.train.folds = num(value)?,
            "train.lr" => o.lr = real(value)?,
            "train.beta1" => o.beta1 = real(value)?,
            "train.beta2" => o.beta2 = real(value)?,
            "train.eps" => o.eps = real(value)?,
            "train.weight_decay" => o.weight_decay = real(value)?,
            "train.seed" | "run.seed" => {
                self.train.seed = value.parse().map_err(|e| Error::Config(format!("{key}={value}: {e}")))?
            }
            "data.root" => self.data_root = Some(PathBuf::from(value)),
            "output.dir" => self.output_dir = PathBuf::from(value),
            "run.precision" => self.precision = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_sections() {
        let cfg = RunConfig::parse(
            "# run\nmodel.groups = 3\n\ntrain.epochs=7 # short\ntrain.lr = 0.001\nrun.precision = f64\ndata.root = /tmp/x\n",
        )
        .unwrap();
        assert_eq!(cfg.model.groups, 3);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.optimizer.lr, 1e-3);
        assert_eq!(cfg.precision, Precision::F64);
        assert_eq!(cfg.data_root.as_deref(), Some(Path::new("/tmp/x")));
    }

    #[test]
    fn defaults_when_empty() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.optimizer.weight_decay, 1e-4);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for bad in ["train.momentum = 0.9", "model.depth = 3", "model.groups=2\nmodel.groups=3", "just text", "train.epochs = -1"] {
            let err = RunConfig::parse(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
            assert_eq!(err.exit_code(), 1);
        }
    }
}
