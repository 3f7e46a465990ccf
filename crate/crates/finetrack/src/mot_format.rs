//! MOT-Challenge text files.
//!
//! Ground truth rows are `frame,id,x,y,w,h,conf,class,vis`; tracker results
//! are `frame,id,x,y,w,h,conf,-1,-1,-1`. Frames and ids are 1-based on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use finetrack_core::geometry::BBox;
use finetrack_core::metrics::Annotation;
use finetrack_core::synthetic_world::FrameRecord;
use finetrack_core::tracker::TrackOutput;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, row {row}: {detail}")]
    Row { path: PathBuf, row: usize, detail: String },
}

fn num(v: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{v}")
}

/// Ground-truth rows for synthetic frames; identity `i` is written as id
/// `i + 1`.
pub fn ground_truth_text(frames: &[FrameRecord]) -> String {
    let mut out = String::new();
    for f in frames {
        for ((b, &id), &vis) in f.boxes.iter().zip(&f.ids).zip(&f.visibility) {
            let [x, y, w, h] = b.to_tlwh();
            writeln!(
                out,
                "{},{},{},{},{},{},1,1,{}",
                f.index + 1,
                id + 1,
                num(x),
                num(y),
                num(w),
                num(h),
                num(vis)
            )
            .expect("writing to a String");
        }
    }
    out
}

/// Result rows for one frame (0-based `frame`).
pub fn append_results(out: &mut String, frame: usize, tracks: &[TrackOutput]) {
    for t in tracks {
        let [x, y, w, h] = t.bbox.to_tlwh();
        writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            frame + 1,
            t.id,
            num(x),
            num(y),
            num(w),
            num(h),
            num(t.confidence)
        )
        .expect("writing to a String");
    }
}

/// Parses ground-truth or result text. Frames come back 0-based; ids are
/// kept as written. Ground-truth rows whose class column is not 1
/// (pedestrian) or whose conf column is 0 are skipped, as in the MOT
/// evaluation kit.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |detail: String| FormatError::Row {
            path: path.to_path_buf(),
            row,
            detail,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 {
            return Err(err(format!("expected at least 6 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad frame `{}`", fields[0])))?;
        let id: u64 = fields[1].parse().map_err(|_| err(format!("bad id `{}`", fields[1])))?;
        if frame == 0 {
            return Err(err("frames are 1-based".into()));
        }
        let mut v = [0.0f64; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = fields[2 + k]
                .parse()
                .map_err(|_| err(format!("bad number `{}`", fields[2 + k])))?;
        }
        let [x, y, w, h] = v;
        if !(w > 0.0 && h > 0.0) || !v.iter().all(|c| c.is_finite()) {
            return Err(err(format!("degenerate box {x},{y},{w},{h}")));
        }
        let conf: Option<f64> = fields.get(6).and_then(|s| s.parse().ok());
        let class: Option<i64> = fields.get(7).and_then(|s| s.parse().ok());
        if fields.len() >= 9 && (class.is_some_and(|c| c > 0 && c != 1) || conf == Some(0.0)) {
            continue;
        }
        out.push(Annotation {
            frame: frame - 1,
            id,
            bbox: BBox::from_tlwh(x, y, w, h),
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_rows_round_trip() {
        let tracks = [TrackOutput {
            id: 3,
            bbox: BBox::new(1.5, 2.0, 11.5, 32.0),
            confidence: 0.9,
        }];
        let mut text = String::new();
        append_results(&mut text, 4, &tracks);
        assert_eq!(text, "5,3,1.5,2,10,30,0.9,-1,-1,-1\n");
        let back = parse_annotations(&text, Path::new("r.txt")).unwrap();
        assert_eq!(
            back,
            vec![Annotation {
                frame: 4,
                id: 3,
                bbox: tracks[0].bbox
            }]
        );
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let text = "1,1,0,0,10,10,1,1,1\n2,1,zero,0,10,10,1,1,1\n";
        match parse_annotations(text, Path::new("gt.txt")) {
            Err(FormatError::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_pedestrian_ground_truth_skipped() {
        let text = "1,1,0,0,10,10,1,1,1\n1,2,0,0,10,10,1,7,1\n1,3,0,0,10,10,0,1,1\n";
        assert_eq!(parse_annotations(text, Path::new("gt.txt")).unwrap().len(), 1);
    }
}
