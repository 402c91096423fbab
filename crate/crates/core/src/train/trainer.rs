//! Mini-batch training, held-out evaluation and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode};
use crate::model::{ModelConfig, MpoxMamba};
use crate::tensor::Scalar;

use super::dataset::Dataset;
use super::kfold::kfold_split;
use super::metrics::{evaluate_metrics, ConfusionMatrix};
use super::optim::{AdamW, AdamWConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            folds: 5,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be >= 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return Err(Error::config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }
}

/// Loss and metrics of one pass over a split (percentages).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitRecord {
    pub loss: f64,
    pub oa: f64,
    pub se_macro: f64,
    pub sp_macro: f64,
    pub confusion: ConfusionMatrix,
}

impl SplitRecord {
    fn from_confusion(loss_sum: f64, confusion: ConfusionMatrix) -> Result<Self> {
        let m = evaluate_metrics(&confusion)?;
        Ok(Self {
            loss: loss_sum / confusion.total() as f64,
            oa: m.oa,
            se_macro: m.se_macro,
            sp_macro: m.sp_macro,
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Running loss/accuracy of the training batches (train-mode statistics).
    pub train: SplitRecord,
    pub eval: Option<SplitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldHistory {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    pub epochs: Vec<EpochRecord>,
}

impl FoldHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train.loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult<T> {
    pub history: FoldHistory,
    /// Weights after the final epoch.
    pub model: MpoxMamba<T>,
}

/// Independent per-fold seed derived from the master seed.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    master ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn with_context(err: Error, context: &str) -> Error {
    match err {
        Error::Numeric(m) => Error::Numeric(format!("{context}: {m}")),
        other => other,
    }
}

/// One shuffled pass over `indices`, updating weights and running stats.
pub fn train_epoch<T: Scalar>(
    model: &mut MpoxMamba<T>,
    optimizer: &mut AdamW<T>,
    data: &Dataset<T>,
    indices: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SplitRecord> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut cm = ConfusionMatrix::new(data.num_classes());
    let mut loss_sum = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, targets) = data.batch(chunk)?;
        let (loss, predictions, grads, stats) = {
            let mut g = Graph::with_params(&model.store, Mode::Train);
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv)?;
            let loss = g.cross_entropy(out.logits, &targets)?;
            let grads = g.backward(loss)?;
            let predictions = g.value(out.logits).argmax_rows()?;
            (g.value(loss).item().as_f64(), predictions, grads.into_param_grads(), g.take_stat_updates())
        };
        optimizer.step(&mut model.store, &grads)?;
        model.store.apply_stat_updates(&stats);
        loss_sum += loss * chunk.len() as f64;
        for (&t, p) in targets.iter().zip(predictions) {
            cm.record(t, p);
        }
    }
    SplitRecord::from_confusion(loss_sum, cm)
}

/// Inference-mode loss and metrics over `indices`.
pub fn evaluate<T: Scalar>(model: &MpoxMamba<T>, data: &Dataset<T>, indices: &[usize], batch_size: usize) -> Result<SplitRecord> {
    let mut cm = ConfusionMatrix::new(data.num_classes());
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, targets) = data.batch(chunk)?;
        let logits = model.predict(&x)?;
        loss_sum += crate::graph::cross_entropy_value(&logits, &targets).as_f64() * chunk.len() as f64;
        for (&t, p) in targets.iter().zip(logits.argmax_rows()?) {
            cm.record(t, p);
        }
    }
    SplitRecord::from_confusion(loss_sum, cm)
}

/// Trains `model` for `config.epochs` epochs, evaluating on `eval` (if
/// non-empty) after each one.
pub fn fit<T: Scalar>(
    model: &mut MpoxMamba<T>,
    data: &Dataset<T>,
    train: &[usize],
    eval: &[usize],
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if model.config.num_classes != data.num_classes() {
        return Err(Error::Dataset(format!(
            "model predicts {} classes, dataset has {}",
            model.config.num_classes,
            data.num_classes()
        )));
    }
    if train.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = AdamW::new(config.optimizer);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let ctx = format!("epoch {epoch}");
        let train_rec = train_epoch(model, &mut optimizer, data, train, config.batch_size, &mut rng)
            .map_err(|e| with_context(e, &ctx))?;
        let eval_rec = if eval.is_empty() {
            None
        } else {
            Some(evaluate(model, data, eval, config.batch_size).map_err(|e| with_context(e, &ctx))?)
        };
        let rec = EpochRecord {
            epoch,
            train: train_rec,
            eval: eval_rec,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Stratified k-fold cross-validation; each fold starts from a fresh model.
pub fn cross_validate<T: Scalar>(
    model_config: &ModelConfig,
    data: &Dataset<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<Vec<FoldResult<T>>> {
    let split = kfold_split(&data.labels, data.num_classes(), config.folds, config.seed)?;
    let mut results = Vec::with_capacity(split.k());
    for fold in 0..split.k() {
        let seed = fold_seed(config.seed, fold);
        let mut model = MpoxMamba::build(model_config.clone(), seed)?;
        let train = split.training(fold);
        let held_out = split.held_out(fold);
        let epochs = fit(&mut model, data, &train, held_out, config, seed, |r| on_epoch(fold, r))
            .map_err(|e| with_context(e, &format!("fold {fold}")))?;
        results.push(FoldResult {
            history: FoldHistory {
                fold,
                seed,
                train_size: train.len(),
                eval_size: held_out.len(),
                epochs,
            },
            model,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::synthetic_dataset;

    fn tiny() -> (ModelConfig, Dataset<f32>) {
        let cfg = ModelConfig {
            input_size: 16,
            stage_depths: vec![1, 1],
            ..ModelConfig::default().scaled(8)
        };
        (cfg, synthetic_dataset(12, 16, 5))
    }

    #[test]
    fn history_length_and_determinism() {
        let (cfg, data) = tiny();
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = MpoxMamba::<f32>::build(cfg.clone(), 1).unwrap();
            let h = fit(&mut m, &data, &[0, 1, 2, 3, 4, 5, 6, 7], &[8, 9, 10, 11], &tc, 9, |_| {}).unwrap();
            (h, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1.len(), 2);
        assert_eq!(h1, h2);
        assert_eq!(h1[1].eval.as_ref().unwrap().confusion.total(), 4);
        for ((_, a), (_, b)) in m1.store.iter().zip(m2.store.iter()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let (cfg, data) = tiny();
        let mut m = MpoxMamba::<f32>::build(ModelConfig { num_classes: 3, ..cfg }, 1).unwrap();
        let err = fit(&mut m, &data, &[0, 1], &[], &TrainConfig::default(), 0, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn fold_seeds_differ() {
        assert_ne!(fold_seed(1, 0), fold_seed(1, 1));
        assert_eq!(fold_seed(1, 3), fold_seed(1, 3));
    }
}
