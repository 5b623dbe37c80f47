//! Differentiable layers with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod shuffle;

pub use activation::{
    act_attention, act_attention_backward, act_silu, act_silu_backward, logistic, Activation,
    AttentionGrad, AttentionParams,
};
pub use conv::{
    conv2d_backward, conv2d_backward_direct, conv2d_flops, conv2d_forward, conv2d_forward_direct,
    ConvKernel, ConvPad, OpGrad, PadMode,
};
pub use shuffle::{pixel_shuffle, pixel_shuffle_backward, pixel_unshuffle};
