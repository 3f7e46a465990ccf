//! Differentiable operations recorded on a [`Tape`](crate::autograd::Tape).

mod basic;
mod conv;
mod dense;
mod norm;
mod pool;
mod sample;

pub use basic::{add, concat, mul, narrow, relu, reshape, scale, sigmoid, sigmoid_value, sum};
pub use conv::{conv2d, Conv2dGeometry};
pub use dense::{batch_matmul, linear, softmax_in_place, softmax_last};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats, BN_EPS};
pub use pool::{channel_max, weighted_pool};
pub use sample::{bilinear_upsample, roi_align, warp, Roi};
