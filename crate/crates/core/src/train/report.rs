//! Metrics CSV and per-fold JSON history.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::trainer::{FoldHistory, SplitRecord};

pub const CSV_HEADER: &str = "fold,epoch,split,oa,se_macro,sp_macro,loss";

fn row(out: &mut String, fold: &str, epoch: usize, split: &str, r: (f64, f64, f64, f64)) {
    let _ = writeln!(out, "{fold},{epoch},{split},{:.4},{:.4},{:.4},{:.6}", r.0, r.1, r.2, r.3);
}

fn values(r: &SplitRecord) -> (f64, f64, f64, f64) {
    (r.oa, r.se_macro, r.sp_macro, r.loss)
}

/// One train row and (when evaluated) one val row per fold and epoch, then a
/// `mean` row averaging each fold's final-epoch held-out values.
pub fn metrics_csv(histories: &[FoldHistory]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for h in histories {
        for e in &h.epochs {
            row(&mut out, &h.fold.to_string(), e.epoch, "train", values(&e.train));
            if let Some(ev) = &e.eval {
                row(&mut out, &h.fold.to_string(), e.epoch, "val", values(ev));
            }
        }
    }
    let finals: Vec<(&SplitRecord, &str)> = histories
        .iter()
        .filter_map(|h| h.epochs.last())
        .map(|e| e.eval.as_ref().map_or((&e.train, "train"), |ev| (ev, "val")))
        .collect();
    if let Some(&(_, split)) = finals.first() {
        let n = finals.len() as f64;
        let mean = |f: fn(&SplitRecord) -> f64| finals.iter().map(|(r, _)| f(r)).sum::<f64>() / n;
        let epoch = histories.iter().filter_map(|h| h.epochs.last()).map(|e| e.epoch).max().unwrap_or(0);
        row(
            &mut out,
            "mean",
            epoch,
            split,
            (mean(|r| r.oa), mean(|r| r.se_macro), mean(|r| r.sp_macro), mean(|r| r.loss)),
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, histories: &[FoldHistory]) -> Result<()> {
    fs::write(path, metrics_csv(histories)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes `fold{n}_history.json` into `dir`.
pub fn write_history_json(dir: &Path, history: &FoldHistory) -> Result<PathBuf> {
    let path = dir.join(format!("fold{}_history.json", history.fold));
    let text = serde_json::to_string_pretty(history)
        .map_err(|e| Error::io("serializing history", std::io::Error::other(e)))?;
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ConfusionMatrix, EpochRecord};

    fn rec(oa: f64, loss: f64) -> SplitRecord {
        SplitRecord {
            loss,
            oa,
            se_macro: oa,
            sp_macro: oa,
            confusion: ConfusionMatrix::new(2),
        }
    }

    fn history(fold: usize, val_oa: f64) -> FoldHistory {
        FoldHistory {
            fold,
            seed: 0,
            train_size: 8,
            eval_size: 2,
            epochs: vec![EpochRecord {
                epoch: 1,
                train: rec(50.0, 0.7),
                eval: Some(rec(val_oa, 0.5)),
            }],
        }
    }

    #[test]
    fn csv_layout_and_mean_row() {
        let csv = metrics_csv(&[history(0, 80.0), history(1, 90.0)]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[2], "0,1,val,80.0000,80.0000,80.0000,0.500000");
        assert_eq!(lines[5], "mean,1,val,85.0000,85.0000,85.0000,0.500000");
    }

    #[test]
    fn json_history_round_trips_through_serde() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_history_json(dir.path(), &history(3, 70.0)).unwrap();
        assert!(path.ends_with("fold3_history.json"));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["epochs"][0]["eval"]["oa"], 70.0);
    }
}
