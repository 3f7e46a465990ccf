//! Shuffle-Group Sampling: cut every video into consecutive batch-sized
//! segments, then shuffle the segments each epoch.

use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BATCH: usize = 8;

/// `len` consecutive frames of one video, starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub video: usize,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn frames(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Cuts each video into `⌊len / batch⌋` segments of exactly `batch` frames;
/// the remainder of each video is dropped.
pub fn build_segments(video_lengths: &[usize], batch: usize) -> Result<Vec<Segment>> {
    if batch < 2 {
        return Err(Error::invalid(
            "batch size",
            alloc::format!("{batch} leaves no room for positive pairs"),
        ));
    }
    Ok(video_lengths
        .iter()
        .enumerate()
        .flat_map(|(video, &len)| {
            (0..len / batch).map(move |i| Segment {
                video,
                start: i * batch,
                len: batch,
            })
        })
        .collect())
}

/// Deterministic permutation of `segments` for one epoch.
pub fn epoch_order(segments: &[Segment], seed: u64) -> Vec<Segment> {
    let mut order = segments.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Segments of a dataset plus the base seed of the per-epoch shuffles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SgsSchedule {
    pub segments: Vec<Segment>,
    pub seed: u64,
}

impl SgsSchedule {
    pub fn new(video_lengths: &[usize], batch: usize, seed: u64) -> Result<Self> {
        Ok(SgsSchedule {
            segments: build_segments(video_lengths, batch)?,
            seed,
        })
    }

    /// Order of epoch `epoch`; each epoch draws from its own derived seed.
    pub fn epoch(&self, epoch: usize) -> Vec<Segment> {
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        epoch_order(&self.segments, seed)
    }
}
