//! Online association: Kalman motion, EMA appearance, gated fused distance
//! and BYTE two-round matching.

mod byte;
mod distance;
pub mod kalman;

pub use byte::{Association, ByteTracker, Detection, Track, TrackOutput, TrackStatus, TrackerConfig};
pub use distance::{
    clamped_cosine, ema_update, feature_distance, fused_distance, fused_pair, gated_feature_distance, hungarian_assign,
    iou_distance, Assignment, DistanceMatrices,
};
pub use kalman::{KalmanFilter, KalmanState};
