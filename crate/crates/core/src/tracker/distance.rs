use alloc::vec::Vec;

use crate::assignment::{min_cost_assignment, CostMatrix};
use crate::error::Result;
use crate::geometry::BBox;
use crate::linalg::{dot, norm, normalize_in_place};

/// Pairwise `1 − IoU` between predicted track boxes (rows) and detections
/// (columns).
pub fn iou_distance(tracks: &[BBox], detections: &[BBox]) -> CostMatrix {
    CostMatrix::from_fn(tracks.len(), detections.len(), |i, j| {
        1.0 - tracks[i].iou(&detections[j])
    })
}

/// Cosine similarity clamped at zero from below.
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    (dot(a, b) / denom).clamp(0.0, 1.0)
}

/// Pairwise `1 − max(0, cos)`, so every entry lies in `[0, 1]`.
pub fn feature_distance<T: AsRef<[f64]>, D: AsRef<[f64]>>(tracks: &[T], detections: &[D]) -> CostMatrix {
    CostMatrix::from_fn(tracks.len(), detections.len(), |i, j| {
        1.0 - clamped_cosine(tracks[i].as_ref(), detections[j].as_ref())
    })
}

/// Appearance distance with similarity suppressed for non-overlapping
/// pairs: `1 − (1 − d_feat)·[d_IoU < 1]`.
pub fn gated_feature_distance(d_feat: f64, d_iou: f64) -> f64 {
    if d_iou < 1.0 {
        d_feat
    } else {
        1.0
    }
}

/// `sqrt(d̃_feat · d_IoU)` for one pair.
pub fn fused_pair(d_feat: f64, d_iou: f64) -> f64 {
    libm::sqrt(gated_feature_distance(d_feat, d_iou) * d_iou)
}

/// All four matrices of one association round.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrices {
    pub feature: CostMatrix,
    pub iou: CostMatrix,
    pub gated_feature: CostMatrix,
    pub fused: CostMatrix,
}

/// Gates `d_feat` by overlap and fuses it with `d_IoU`.
pub fn fused_distance(d_feat: &CostMatrix, d_iou: &CostMatrix) -> Result<DistanceMatrices> {
    if d_feat.rows() != d_iou.rows() || d_feat.cols() != d_iou.cols() {
        return Err(crate::error::Error::shape(
            "fused_distance",
            alloc::format!(
                "{}x{} vs {}x{}",
                d_feat.rows(),
                d_feat.cols(),
                d_iou.rows(),
                d_iou.cols()
            ),
        ));
    }
    let (r, c) = (d_feat.rows(), d_feat.cols());
    let gated = CostMatrix::from_fn(r, c, |i, j| gated_feature_distance(d_feat.get(i, j), d_iou.get(i, j)));
    let fused = CostMatrix::from_fn(r, c, |i, j| libm::sqrt(gated.get(i, j) * d_iou.get(i, j)));
    Ok(DistanceMatrices {
        feature: d_feat.clone(),
        iou: d_iou.clone(),
        gated_feature: gated,
        fused,
    })
}

/// `λ·prev + (1 − λ)·new`, rescaled to unit length.
pub fn ema_update(prev: &[f64], new: &[f64], momentum: f64) -> Vec<f64> {
    let mut out: Vec<f64> = prev
        .iter()
        .zip(new)
        .map(|(p, n)| momentum * p + (1.0 - momentum) * n)
        .collect();
    normalize_in_place(&mut out, 1e-12);
    out
}

/// Result of a thresholded assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Minimum-cost assignment; pairs costing more than `threshold` are
/// dissolved.
pub fn hungarian_assign(cost: &CostMatrix, threshold: f64) -> Result<Assignment> {
    let pairs = min_cost_assignment(cost)?;
    let matches: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(r, c)| cost.get(r, c) <= threshold)
        .collect();
    let unmatched_rows = (0..cost.rows())
        .filter(|r| !matches.iter().any(|m| m.0 == *r))
        .collect();
    let unmatched_cols = (0..cost.cols())
        .filter(|c| !matches.iter().any(|m| m.1 == *c))
        .collect();
    Ok(Assignment {
        matches,
        unmatched_rows,
        unmatched_cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_distance_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let d = iou_distance(
            &[a],
            &[a, BBox::new(20.0, 20.0, 30.0, 30.0), BBox::new(5.0, 0.0, 15.0, 10.0)],
        );
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert!((d.get(0, 2) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn feature_distance_cases() {
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        let w = [-1.0, 0.0];
        let d = feature_distance(&[u], &[u, v, w]);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(0, 2), 1.0);
    }

    #[test]
    fn fused_cases() {
        assert_eq!(fused_pair(0.0, 1.0), 1.0);
        assert_eq!(fused_pair(0.9, 0.0), 0.0);
        assert!((fused_pair(0.5, 2.0 / 3.0) - libm::sqrt(0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn ema_fixed_point_and_mix() {
        let u = [0.6, 0.8];
        let out = ema_update(&u, &u, 0.9);
        assert!((out[0] - 0.6).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);
        let mixed = ema_update(&[1.0, 0.0], &[0.0, 1.0], 0.9);
        let n = libm::sqrt(0.81 + 0.01);
        assert!((mixed[0] - 0.9 / n).abs() < 1e-12 && (mixed[1] - 0.1 / n).abs() < 1e-12);
    }

    #[test]
    fn hungarian_threshold() {
        let c = CostMatrix::new(2, 2, alloc::vec![0.1, 0.9, 0.9, 0.1]).unwrap();
        assert_eq!(hungarian_assign(&c, 0.5).unwrap().matches, alloc::vec![(0, 0), (1, 1)]);
        let c = CostMatrix::new(1, 1, alloc::vec![0.6]).unwrap();
        let a = hungarian_assign(&c, 0.5).unwrap();
        assert!(a.matches.is_empty());
        assert_eq!((a.unmatched_rows, a.unmatched_cols), (alloc::vec![0], alloc::vec![0]));
        let empty = CostMatrix::new(0, 3, alloc::vec![]).unwrap();
        assert_eq!(
            hungarian_assign(&empty, 0.5).unwrap().unmatched_cols,
            alloc::vec![0, 1, 2]
        );
    }
}
