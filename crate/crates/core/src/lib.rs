//! Hierarchical and contrastive Forward-Forward training.
//!
//! Every convolutional layer is trained on its own local objective: a
//! channel-wise competitive loss over per-class mean goodness, evaluated at a
//! layer-specific level of a class hierarchy, plus a supervised contrastive
//! loss on the goodness-decoupled features. No gradient crosses a layer
//! boundary, which lets layers train concurrently as pipeline stages.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod hierarchy;
pub mod inference;
pub mod layers;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
