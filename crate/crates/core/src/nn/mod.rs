//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer owns its parameters as plain `ndarray` tensors. Gradients are
//! accumulated into a second instance of the same layer type, so a model and
//! its gradient share one structure and can be walked together through
//! [`ParamSet`].

pub mod checkpoint;
pub mod gradcheck;
mod layer_norm;
mod linear;
mod ops;
mod optim;
mod params;

pub use checkpoint::Checkpoint;
pub use layer_norm::{LayerNorm, LayerNormCache};
pub use linear::Linear;
pub use ops::{
    affine, affine_backward, global_max_pool, global_max_pool_backward, leaky_relu,
    leaky_relu_backward, mse, softmax_cross_entropy, AffineGrad, LEAKY_SLOPE,
};
pub use optim::AdamW;
pub use params::{
    accumulate, glorot_uniform, join_name, num_params, scale_grads, zero_grads, zeros_like, ParamSet,
};
