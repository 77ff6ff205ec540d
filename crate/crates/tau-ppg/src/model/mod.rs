//! The temporal-attentive U-Net: configuration, weights, forward pass,
//! training, and inference.

pub mod config;
pub mod infer;
pub mod net;
pub mod train;
pub mod weights;

pub use config::{TauConfig, Variant, WidthPlan};
pub use infer::{detect, Detection};
pub use net::{aux_head, forward, phase, ForwardPass, TimeModuleTrace};
pub use train::{evaluate_loss, loss_and_gradients, train_step, AdamW, TrainOptions};
pub use weights::{parameter_shapes, ModelWeights};
