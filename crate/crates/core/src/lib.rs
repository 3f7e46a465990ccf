//! FineTrack core: a small reverse-mode autograd substrate, the
//! flow-aligned FPN and multi-part mask heads, training objectives, batch
//! sampling, online association and evaluation metrics.
//!
//! `no_std` with `alloc`; enable the `std` feature for `std::error::Error`
//! and threaded GEMM support.

#![cfg_attr(not(feature = "std"), no_std)]
// Small fixed-size matrix code reads best with explicit indices.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod assignment;
pub mod autograd;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod neural_blocks;
pub mod nn;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod representation;
pub mod sampling;
pub mod synthetic_world;
pub mod tensor;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
