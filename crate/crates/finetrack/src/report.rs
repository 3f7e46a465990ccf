//! Human-readable tables and `key=value` files for metrics.

use std::fmt::Write as _;

use finetrack_core::metrics::{ClearMetrics, RetrievalScores};

/// Tracking metrics of every sequence plus the pooled totals.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    pub sequences: Vec<(String, ClearMetrics)>,
}

impl TrackingReport {
    /// Counts summed over sequences; MOTA and IDF1 recomputed from the sums.
    pub fn overall(&self) -> Option<ClearMetrics> {
        let mut it = self.sequences.iter().map(|(_, m)| *m);
        let first = it.next()?;
        let sum = it.fold(first, |a, b| ClearMetrics {
            id_switches: a.id_switches + b.id_switches,
            false_positives: a.false_positives + b.false_positives,
            false_negatives: a.false_negatives + b.false_negatives,
            matches: a.matches + b.matches,
            gt_count: a.gt_count + b.gt_count,
            hyp_count: a.hyp_count + b.hyp_count,
            idtp: a.idtp + b.idtp,
            ..a
        });
        Some(ClearMetrics {
            mota: 1.0 - (sum.false_negatives + sum.false_positives + sum.id_switches) as f64 / sum.gt_count as f64,
            idf1: 2.0 * sum.idtp as f64 / (sum.gt_count + sum.hyp_count) as f64,
            ..sum
        })
    }

    fn rows(&self) -> Vec<(String, ClearMetrics)> {
        let mut rows = self.sequences.clone();
        if let Some(o) = self.overall() {
            rows.push(("OVERALL".into(), o));
        }
        rows
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let width = self.rows().iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
        writeln!(
            s,
            "{:<width$}  {:>7}  {:>7}  {:>5}  {:>5}  {:>5}  {:>5}",
            "sequence", "MOTA", "IDF1", "IDs", "FP", "FN", "GT"
        )
        .unwrap();
        for (name, m) in self.rows() {
            writeln!(
                s,
                "{:<width$}  {:>7.4}  {:>7.4}  {:>5}  {:>5}  {:>5}  {:>5}",
                name, m.mota, m.idf1, m.id_switches, m.false_positives, m.false_negatives, m.gt_count
            )
            .unwrap();
        }
        s
    }

    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for (name, m) in self.rows() {
            let name = name.to_lowercase();
            writeln!(s, "{name}.mota={}", m.mota).unwrap();
            writeln!(s, "{name}.idf1={}", m.idf1).unwrap();
            writeln!(s, "{name}.id_switches={}", m.id_switches).unwrap();
            writeln!(s, "{name}.false_positives={}", m.false_positives).unwrap();
            writeln!(s, "{name}.false_negatives={}", m.false_negatives).unwrap();
            writeln!(s, "{name}.gt_count={}", m.gt_count).unwrap();
            writeln!(s, "{name}.hyp_count={}", m.hyp_count).unwrap();
        }
        s
    }
}

pub fn retrieval_table(scores: &RetrievalScores, queries: usize, gallery: usize) -> String {
    format!(
        "queries  gallery   Rank-1      mAP\n{:>7}  {:>7}  {:>7.4}  {:>7.4}\n",
        queries, gallery, scores.rank1, scores.map
    )
}

pub fn retrieval_key_values(scores: &RetrievalScores, queries: usize, gallery: usize) -> String {
    format!(
        "rank1={}\nmap={}\nqueries={queries}\ngallery={gallery}\n",
        scores.rank1, scores.map
    )
}

/// Parses a `key=value` file into pairs, ignoring blank lines.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
