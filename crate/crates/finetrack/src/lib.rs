//! File formats, configuration and end-to-end pipelines around
//! `finetrack-core`: synthetic training, tracking, evaluation and
//! visualization.

pub mod checkpoint;
pub mod config;
pub mod mot_format;
pub mod pipeline;
pub mod report;
pub mod visualize;

pub use finetrack_core as core;
