//! Channel-wise convolutional (CW-Conv) layers and the residual network
//! built from them.
//!
//! A CW-Conv layer convolves, applies ReLU, splits its output channels into
//! one contiguous subset per class and reads a goodness score off each
//! subset. The output that travels downstream is normalized so the goodness
//! cannot be read back from it. Each layer carries its own projection head
//! for the contrastive term and is updated from its own loss only.
//!
//! # Residual wiring
//!
//! A block with input `x` and layers `a, b, c, d` computes
//! `z_a = a(x)`, `z_b = b(z_a)`, `z_c = c(z_b)`, `z_d = d(z_c)`, then
//! `y = z_d + z_b`. Every block except the last hands
//! `concat(y, pool(x))` to the next block, where `pool` is a 2×2 average
//! pool applied only when `x` has twice the resolution of `y`. The first
//! layer of every block after the first has stride 2.

mod cw_conv;
mod network;

pub use cw_conv::{
    apply_grads, argmax, cw_conv_forward, cw_conv_local_update, forward_batch,
    local_loss_and_grads, BatchOutput, GoodnessMode, LayerConfig, LayerGrads, LayerOutput,
    LayerState, LocalObjective, LossReport, Param, CHUNK, PARAM_NAMES,
};
pub use network::{
    build_network, residual_merge, residual_merge_batch, route, Carry, LayerRole, Network,
    NetworkOutput, NetworkSpec, LAYERS_PER_BLOCK,
};
