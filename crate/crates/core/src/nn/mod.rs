//! Minimal dense MLP engine: forward/backward passes, He-normal init, inverted
//! dropout, Adam and the L2 loss. All math is `f64`.

mod adam;
pub mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use matrix::Matrix;
pub use mlp::{he_normal_init, l2_loss, l2_loss_grad, Activation, DenseLayer, Gradients, LayerGradient, Mlp, Tape};
