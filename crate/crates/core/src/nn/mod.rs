//! Minimal neural-network core: dense tensors, a fixed-topology layer chain
//! with forward/backward passes, SGD, and a finite-difference oracle.

mod checkpoint;
mod gradcheck;
mod layers;
mod model;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::finite_diff_grad;
pub use layers::{group_norm_forward, ActivationShape, LayerSpec, GROUP_NORM_EPS};
pub use model::{build_model, Model, ModelConfig, ModelParams};
pub use tensor::Tensor;
