use alloc::vec::Vec;

use crate::assignment::CostMatrix;
use crate::error::Result;
use crate::geometry::BBox;

use super::distance::{clamped_cosine, ema_update, fused_pair, hungarian_assign, iou_distance};
use super::kalman::{KalmanFilter, KalmanState};

/// Cost used in the first (high-confidence) association round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    /// Gated appearance distance fused with IoU distance.
    Fused,
    /// IoU distance alone (motion-only ablation).
    IouOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub high_threshold: f64,
    pub low_threshold: f64,
    /// Threshold on the fused (or IoU) distance in the first round.
    pub match_threshold: f64,
    /// Threshold on IoU distance for low-confidence detections.
    pub low_match_threshold: f64,
    /// Threshold on IoU distance for tentative tracks.
    pub tentative_match_threshold: f64,
    pub max_age: usize,
    /// Consecutive hits that confirm a tentative track.
    pub min_hits: usize,
    pub ema_momentum: f64,
    pub association: Association,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            high_threshold: 0.6,
            low_threshold: 0.1,
            match_threshold: 0.5,
            low_match_threshold: 0.5,
            tentative_match_threshold: 0.7,
            max_age: 30,
            min_hits: 2,
            ema_momentum: 0.9,
            association: Association::Fused,
        }
    }
}

/// One detection handed to the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    /// Unit-norm appearance descriptor; expected for high-confidence
    /// detections.
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: u64,
    pub state: KalmanState,
    pub embedding: Option<Vec<f64>>,
    pub status: TrackStatus,
    pub frames_since_update: usize,
    pub hits: usize,
    pub confidence: f64,
}

impl Track {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn bbox(&self) -> BBox {
        self.state.bbox()
    }
}

/// A confirmed track reported for the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Two-round BYTE association with appearance-gated fused distance in the
/// first round.
#[derive(Debug, Clone)]
pub struct ByteTracker {
    config: TrackerConfig,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    frame: usize,
}

impl ByteTracker {
    pub fn new(config: TrackerConfig) -> Self {
        ByteTracker {
            config,
            kf: KalmanFilter,
            tracks: Vec::new(),
            next_id: 1,
            frame: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    fn first_round_cost(&self, pool: &[usize], dets: &[&Detection]) -> CostMatrix {
        let boxes: Vec<BBox> = pool.iter().map(|&t| self.tracks[t].bbox()).collect();
        let det_boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let d_iou = iou_distance(&boxes, &det_boxes);
        match self.config.association {
            Association::IouOnly => d_iou,
            Association::Fused => CostMatrix::from_fn(pool.len(), dets.len(), |i, j| {
                let iou = d_iou.get(i, j);
                match (&self.tracks[pool[i]].embedding, &dets[j].embedding) {
                    (Some(t), Some(d)) => fused_pair(1.0 - clamped_cosine(t, d), iou),
                    _ => iou,
                }
            }),
        }
    }

    fn apply_update(&mut self, track: usize, det: &Detection, with_appearance: bool) {
        let momentum = self.config.ema_momentum;
        let t = &mut self.tracks[track];
        self.kf.update(&mut t.state, &det.bbox);
        if with_appearance {
            if let Some(e) = &det.embedding {
                t.embedding = Some(match &t.embedding {
                    Some(prev) => ema_update(prev, e, momentum),
                    None => e.clone(),
                });
            }
        }
        t.frames_since_update = 0;
        t.hits += 1;
        t.confidence = det.confidence;
        if t.status == TrackStatus::Lost {
            t.status = TrackStatus::Confirmed;
        }
    }

    /// Advances one frame and returns the confirmed tracks updated in it.
    pub fn step(&mut self, detections: &[Detection]) -> Result<Vec<TrackOutput>> {
        self.frame += 1;
        let cfg = self.config;
        let high: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.confidence >= cfg.high_threshold)
            .collect();
        let low: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.confidence >= cfg.low_threshold && d.confidence < cfg.high_threshold)
            .collect();

        for t in &mut self.tracks {
            if t.status != TrackStatus::Confirmed {
                t.state.mean[7] = 0.0;
            }
            self.kf.predict(&mut t.state);
            t.frames_since_update += 1;
        }

        // Round 1: confirmed and lost tracks vs high-confidence detections.
        let pool: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status != TrackStatus::Tentative)
            .collect();
        let cost = self.first_round_cost(&pool, &high);
        let first = hungarian_assign(&cost, cfg.match_threshold)?;
        for &(r, c) in &first.matches {
            self.apply_update(pool[r], high[c], true);
        }

        // Round 2: still-tracked leftovers vs low-confidence detections, IoU only.
        let leftover: Vec<usize> = first
            .unmatched_rows
            .iter()
            .map(|&r| pool[r])
            .filter(|&t| self.tracks[t].status == TrackStatus::Confirmed)
            .collect();
        let boxes: Vec<BBox> = leftover.iter().map(|&t| self.tracks[t].bbox()).collect();
        let low_boxes: Vec<BBox> = low.iter().map(|d| d.bbox).collect();
        let second = hungarian_assign(&iou_distance(&boxes, &low_boxes), cfg.low_match_threshold)?;
        for &(r, c) in &second.matches {
            self.apply_update(leftover[r], low[c], false);
        }
        for &r in &second.unmatched_rows {
            self.tracks[leftover[r]].status = TrackStatus::Lost;
        }

        // Round 3: tentative tracks vs remaining high-confidence detections.
        let remaining: Vec<&Detection> = first.unmatched_cols.iter().map(|&c| high[c]).collect();
        let tentative: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status == TrackStatus::Tentative)
            .collect();
        let boxes: Vec<BBox> = tentative.iter().map(|&t| self.tracks[t].bbox()).collect();
        let rem_boxes: Vec<BBox> = remaining.iter().map(|d| d.bbox).collect();
        let third = hungarian_assign(&iou_distance(&boxes, &rem_boxes), cfg.tentative_match_threshold)?;
        let mut dead: Vec<usize> = third.unmatched_rows.iter().map(|&r| tentative[r]).collect();
        for &(r, c) in &third.matches {
            let t = tentative[r];
            self.apply_update(t, remaining[c], true);
            if self.tracks[t].hits >= cfg.min_hits {
                self.tracks[t].status = TrackStatus::Confirmed;
            }
        }

        // Births.
        for &c in &third.unmatched_cols {
            let det = remaining[c];
            let status = if self.frame == 1 || cfg.min_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id: self.next_id,
                state: self.kf.initiate(&det.bbox),
                embedding: det.embedding.clone(),
                status,
                frames_since_update: 0,
                hits: 1,
                confidence: det.confidence,
            });
            self.next_id += 1;
        }

        for (i, t) in self.tracks.iter().enumerate() {
            if t.status == TrackStatus::Lost && t.frames_since_update > cfg.max_age {
                dead.push(i);
            }
        }
        dead.sort_unstable();
        for i in dead.into_iter().rev() {
            self.tracks.remove(i);
        }

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed && t.frames_since_update == 0)
            .map(|t| TrackOutput {
                id: t.id,
                bbox: t.bbox(),
                confidence: t.confidence,
            })
            .collect())
    }
}
