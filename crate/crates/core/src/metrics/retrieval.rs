use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Query and gallery embeddings with their identity labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalSet {
    pub query: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
    pub gallery: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalScores {
    pub rank1: f64,
    pub map: f64,
}

/// Mean over relevant positions of precision at that position; `relevant`
/// is the ranked gallery's relevance list.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Ranks the gallery for every query by descending cosine similarity (ties
/// keep gallery order) and scores Rank-1 and mAP.
pub fn rank1_map(set: &RetrievalSet) -> Result<RetrievalScores> {
    if set.query.is_empty() || set.gallery.is_empty() {
        return Err(Error::invalid("retrieval set", "empty query or gallery"));
    }
    if set.query.len() != set.query_labels.len() || set.gallery.len() != set.gallery_labels.len() {
        return Err(Error::shape("rank1_map", "embedding and label counts differ"));
    }
    let mut rank1 = 0.0;
    let mut map = 0.0;
    for (q, &label) in set.query.iter().zip(&set.query_labels) {
        if !set.gallery_labels.contains(&label) {
            return Err(Error::invalid(
                "retrieval set",
                alloc::format!("query label {label} absent from gallery"),
            ));
        }
        let sims: Vec<f64> = set.gallery.iter().map(|g| cosine(q, g)).collect();
        if sims.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                what: "retrieval similarity",
            });
        }
        let mut order: Vec<usize> = (0..sims.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        let relevant: Vec<bool> = order.iter().map(|&g| set.gallery_labels[g] == label).collect();
        if relevant[0] {
            rank1 += 1.0;
        }
        map += average_precision(&relevant);
    }
    let n = set.query.len() as f64;
    Ok(RetrievalScores {
        rank1: rank1 / n,
        map: map / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn duplicates_rank_first() {
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, -0.8]];
        let set = RetrievalSet {
            query: e.clone(),
            query_labels: vec![0, 1, 2],
            gallery: e,
            gallery_labels: vec![0, 1, 2],
        };
        let s = rank1_map(&set).unwrap();
        assert_eq!((s.rank1, s.map), (1.0, 1.0));
    }

    #[test]
    fn match_ranked_second() {
        let set = RetrievalSet {
            query: vec![vec![1.0, 0.0]],
            query_labels: vec![0],
            gallery: vec![vec![1.0, 0.1], vec![0.5, 1.0]],
            gallery_labels: vec![1, 0],
        };
        let s = rank1_map(&set).unwrap();
        assert_eq!((s.rank1, s.map), (0.0, 0.5));
    }

    #[test]
    fn missing_label_rejected() {
        let set = RetrievalSet {
            query: vec![vec![1.0]],
            query_labels: vec![3],
            gallery: vec![vec![1.0]],
            gallery_labels: vec![0],
        };
        assert!(rank1_map(&set).is_err());
    }
}
