//! MpoxMamba: a lightweight selective-state-space / CNN hybrid image
//! classifier with its own tensor autodiff, training harness and
//! Grad-CAM explanations.

pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod ops;
pub mod param;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod vision_mamba;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Mode, Var};
pub use param::{Param, ParamId, ParamStore};
pub use tensor::{DType, Scalar, Tensor};
