//! Retrieval metrics (Rank-1, mAP) and tracking metrics (CLEAR-MOT MOTA,
//! identity switches, IDF1).

mod clear;
mod retrieval;

pub use clear::{clear_metrics, Annotation, ClearMetrics, TrackingEval, MATCH_IOU};
pub use retrieval::{average_precision, rank1_map, RetrievalScores, RetrievalSet};
