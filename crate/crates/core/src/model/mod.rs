//! SPAN network definition, forward/backward passes and re-parameterisation.

pub mod config;
pub mod params;
pub mod rep;
pub mod spab;
pub mod span;

pub use config::{BranchMask, SpabConfig, SpanConfig, Variant};
pub use params::{fuse_model, param_count, BlockParams, NamedTensor, SpanModel, SpanParams};
pub use rep::{fuse_rep, RepConvBranchSet};
pub use spab::{attention_grad_factor, spab_backward, spab_forward, BlockContext, BlockGrads, BlockTape, Mode};
pub use span::{forward_flops, span_backward, span_backward_traced, span_forward, BackwardTrace, Tape};
