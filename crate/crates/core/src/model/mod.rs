//! The full classifier: configuration, network, budget, persistence and
//! explanations.

pub mod budget;
pub mod checkpoint;
mod config;
pub mod grad_cam;
mod network;

pub use budget::{budget, count_flops, Budget, BudgetRow};
pub use checkpoint::Checkpoint;
pub use config::{Ablation, ModelConfig};
pub use grad_cam::{grad_cam, GradCam};
pub use network::{ForwardOutput, MpoxMamba, Stage};
