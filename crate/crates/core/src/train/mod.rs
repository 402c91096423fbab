//! Data ingestion, cross-validation, optimization and metrics.

pub mod dataset;
pub mod kfold;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod trainer;

pub use dataset::{load_dataset, load_image, synthetic_dataset, Dataset, DatasetEntry, DatasetIndex};
pub use kfold::{kfold_split, FoldSplit};
pub use metrics::{evaluate_metrics, ClassMetrics, ConfusionMatrix, Metrics};
pub use optim::{adamw_update, AdamW, AdamWConfig};
pub use trainer::{cross_validate, evaluate, fit, fold_seed, EpochRecord, FoldHistory, FoldResult, SplitRecord, TrainConfig};
