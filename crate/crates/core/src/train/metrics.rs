//! Confusion matrix and OA / sensitivity / specificity (percentages).

use serde::Serialize;

use crate::error::{Error, Result};

/// `counts[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|row| row.len() != k) {
            return Err(Error::dim("confusion matrix must be square"));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, prediction: usize) {
        self.counts[truth][prediction] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    /// `TP / (TP + FN)`; NaN when the class never occurs in the ground truth.
    pub sensitivity: f64,
    /// `TN / (TN + FP)`; NaN when every sample belongs to the class.
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub oa: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Means over the defined per-class values.
    pub se_macro: f64,
    pub sp_macro: f64,
}

impl Metrics {
    /// Binary problems report class 0 as the positive class; otherwise the
    /// macro averages. Returns `(oa, se, sp)`.
    pub fn headline(&self) -> (f64, f64, f64) {
        if self.per_class.len() == 2 {
            (self.oa, self.per_class[0].sensitivity, self.per_class[0].specificity)
        } else {
            (self.oa, self.se_macro, self.sp_macro)
        }
    }
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn defined_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn evaluate_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("empty confusion matrix".into()));
    }
    let k = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let actual: u64 = cm.counts[c].iter().sum();
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let fp = predicted - tp;
            let negatives = total - actual;
            ClassMetrics {
                sensitivity: percent(tp, actual),
                specificity: percent(negatives - fp, negatives),
            }
        })
        .collect();
    Ok(Metrics {
        oa: percent(cm.trace(), total),
        se_macro: defined_mean(per_class.iter().map(|m| m.sensitivity)),
        sp_macro: defined_mean(per_class.iter().map(|m| m.specificity)),
        per_class,
    })
}
