use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::assignment::{min_cost_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// IoU a ground-truth/hypothesis pair needs to count as a match.
pub const MATCH_IOU: f64 = 0.5;

/// One labeled box of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub frame: usize,
    pub id: u64,
    pub bbox: BBox,
}

/// Ground truth and hypotheses of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingEval {
    pub ground_truth: Vec<Annotation>,
    pub hypotheses: Vec<Annotation>,
    pub iou_threshold: f64,
}

impl TrackingEval {
    pub fn new(ground_truth: Vec<Annotation>, hypotheses: Vec<Annotation>) -> Self {
        TrackingEval {
            ground_truth,
            hypotheses,
            iou_threshold: MATCH_IOU,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearMetrics {
    pub mota: f64,
    pub idf1: f64,
    pub id_switches: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matches: usize,
    pub gt_count: usize,
    pub hyp_count: usize,
    /// Identity true positives of the global id matching.
    pub idtp: usize,
}

type Frames<'a> = BTreeMap<usize, Vec<&'a Annotation>>;

fn by_frame<'a>(records: &'a [Annotation], side: &'static str) -> Result<Frames<'a>> {
    let mut frames: Frames<'a> = BTreeMap::new();
    for r in records {
        if !r.bbox.is_valid() {
            return Err(Error::invalid(
                side,
                alloc::format!("invalid box for id {} in frame {}", r.id, r.frame),
            ));
        }
        let entry = frames.entry(r.frame).or_default();
        if entry.iter().any(|o| o.id == r.id) {
            return Err(Error::invalid(
                side,
                alloc::format!("id {} appears twice in frame {}", r.id, r.frame),
            ));
        }
        entry.push(r);
    }
    Ok(frames)
}

/// Matching IoU-feasible pairs of one frame, maximizing the number of
/// matches and then total IoU.
fn match_remaining(gt: &[&Annotation], hyp: &[&Annotation], threshold: f64) -> Result<Vec<(usize, usize)>> {
    let penalty = (gt.len().min(hyp.len()) + 1) as f64;
    let cost = CostMatrix::from_fn(gt.len(), hyp.len(), |i, j| {
        let iou = gt[i].bbox.iou(&hyp[j].bbox);
        if iou >= threshold {
            1.0 - iou
        } else {
            penalty
        }
    });
    Ok(min_cost_assignment(&cost)?
        .into_iter()
        .filter(|&(i, j)| gt[i].bbox.iou(&hyp[j].bbox) >= threshold)
        .collect())
}

/// CLEAR-MOT counts plus IDF1.
///
/// Per frame, ground-truth objects keep their previous hypothesis while the
/// pair still overlaps by the threshold; the rest are matched by minimum
/// `1 − IoU` among pairs above the threshold. A switch is counted when an
/// object is matched to a different hypothesis than at its last match.
pub fn clear_metrics(eval: &TrackingEval) -> Result<ClearMetrics> {
    let thr = eval.iou_threshold;
    let gt_frames = by_frame(&eval.ground_truth, "ground truth")?;
    let hyp_frames = by_frame(&eval.hypotheses, "hypotheses")?;
    let gt_count = eval.ground_truth.len();
    if gt_count == 0 {
        return Err(Error::invalid("ground truth", "no ground-truth boxes"));
    }
    let hyp_count = eval.hypotheses.len();
    let frames: BTreeSet<usize> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();

    let mut last_match: BTreeMap<u64, u64> = BTreeMap::new();
    let mut cooccur: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let (mut matches, mut switches) = (0usize, 0usize);
    let empty = Vec::new();
    for f in frames {
        let gt = gt_frames.get(&f).unwrap_or(&empty);
        let hyp = hyp_frames.get(&f).unwrap_or(&empty);
        for g in gt {
            for h in hyp {
                if g.bbox.iou(&h.bbox) >= thr {
                    *cooccur.entry((g.id, h.id)).or_default() += 1;
                }
            }
        }

        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut gt_used = alloc::vec![false; gt.len()];
        let mut hyp_used = alloc::vec![false; hyp.len()];
        for (i, g) in gt.iter().enumerate() {
            let Some(&prev) = last_match.get(&g.id) else { continue };
            if let Some(j) = hyp.iter().position(|h| h.id == prev) {
                if !hyp_used[j] && g.bbox.iou(&hyp[j].bbox) >= thr {
                    gt_used[i] = true;
                    hyp_used[j] = true;
                    pairs.push((i, j));
                }
            }
        }
        let gt_rest: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
        let hyp_rest: Vec<usize> = (0..hyp.len()).filter(|&j| !hyp_used[j]).collect();
        let g_refs: Vec<&Annotation> = gt_rest.iter().map(|&i| gt[i]).collect();
        let h_refs: Vec<&Annotation> = hyp_rest.iter().map(|&j| hyp[j]).collect();
        for (a, b) in match_remaining(&g_refs, &h_refs, thr)? {
            let (i, j) = (gt_rest[a], hyp_rest[b]);
            if let Some(&prev) = last_match.get(&gt[i].id) {
                if prev != hyp[j].id {
                    switches += 1;
                }
            }
            pairs.push((i, j));
        }
        for &(i, j) in &pairs {
            last_match.insert(gt[i].id, hyp[j].id);
        }
        matches += pairs.len();
    }

    let false_negatives = gt_count - matches;
    let false_positives = hyp_count - matches;
    let mota = 1.0 - (false_negatives + false_positives + switches) as f64 / gt_count as f64;
    let idtp = identity_true_positives(&cooccur)?;
    let idf1 = 2.0 * idtp as f64 / (gt_count + hyp_count) as f64;
    Ok(ClearMetrics {
        mota,
        idf1,
        id_switches: switches,
        false_positives,
        false_negatives,
        matches,
        gt_count,
        hyp_count,
        idtp,
    })
}

/// Largest total co-occurrence over one-to-one ground-truth/hypothesis id
/// pairings.
fn identity_true_positives(cooccur: &BTreeMap<(u64, u64), usize>) -> Result<usize> {
    if cooccur.is_empty() {
        return Ok(0);
    }
    let gt_ids: Vec<u64> = cooccur
        .keys()
        .map(|k| k.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hyp_ids: Vec<u64> = cooccur
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let top = cooccur.values().copied().max().unwrap_or(0) as f64;
    let count = |i: usize, j: usize| cooccur.get(&(gt_ids[i], hyp_ids[j])).copied().unwrap_or(0);
    let cost = CostMatrix::from_fn(gt_ids.len(), hyp_ids.len(), |i, j| top - count(i, j) as f64);
    Ok(min_cost_assignment(&cost)?.into_iter().map(|(i, j)| count(i, j)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ann(frame: usize, id: u64, x: f64) -> Annotation {
        Annotation {
            frame,
            id,
            bbox: BBox::new(x, 0.0, x + 10.0, 20.0),
        }
    }

    #[test]
    fn perfect_hypothesis() {
        let gt: Vec<Annotation> = (0..5).flat_map(|f| [ann(f, 1, 0.0), ann(f, 2, 50.0)]).collect();
        let m = clear_metrics(&TrackingEval::new(gt.clone(), gt)).unwrap();
        assert_eq!(
            (m.mota, m.idf1, m.id_switches, m.false_positives, m.false_negatives),
            (1.0, 1.0, 0, 0, 0)
        );
    }

    #[test]
    fn empty_hypothesis() {
        let gt = vec![ann(0, 1, 0.0), ann(1, 1, 0.0)];
        let m = clear_metrics(&TrackingEval::new(gt, vec![])).unwrap();
        assert_eq!((m.mota, m.idf1, m.false_negatives), (0.0, 0.0, 2));
    }

    #[test]
    fn empty_ground_truth_rejected() {
        assert!(clear_metrics(&TrackingEval::new(vec![], vec![ann(0, 1, 0.0)])).is_err());
    }

    #[test]
    fn duplicate_id_rejected() {
        let gt = vec![ann(0, 1, 0.0), ann(0, 1, 30.0)];
        assert!(clear_metrics(&TrackingEval::new(gt.clone(), vec![])).is_err());
    }
}
