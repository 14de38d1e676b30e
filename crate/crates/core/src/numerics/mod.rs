//! Dense tensors, the forward/backward passes of every primitive used by a
//! CW-Conv layer, the Adam optimizer and the epoch schedules.
//!
//! All functions are pure over their inputs (optimizer state is updated in
//! place but depends only on the arguments). Every reduction runs in index
//! order, so repeated calls are bit-identical.

mod adam;
mod conv;
mod norm;
mod pool;
mod schedule;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, WeightDecayMode};
pub use conv::{conv2d, conv2d_backward, ConvGeometry, ConvGrads};
pub use norm::{
    group_norm, group_norm_backward, length_norm, length_norm_backward, relu, relu_backward,
    GroupNormOutput,
};
pub use pool::{
    avg_pool_2x2, avg_pool_2x2_backward, global_avg_pool, global_avg_pool_backward, linear,
    linear_backward, LinearGrads,
};
pub use schedule::{cosine_lr, tau_schedule, ScheduleConfig};
pub use tensor::{Real, Tensor};

pub(crate) use conv::{conv2d_param_grads_raw, conv2d_raw, im2col, ConvDims};
pub(crate) use norm::{
    group_norm_backward_raw, group_norm_raw, length_norm_backward_raw, length_norm_raw,
};
pub(crate) use pool::{linear_backward_raw, linear_raw};
