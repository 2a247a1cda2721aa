//! Detection-to-annotation matching, precision/recall/F1 and timing errors.

use std::io::Write;
use std::path::Path;

use crate::data::Annotation;
use crate::error::{Error, Result};
use crate::postprocess::Detection;

pub const SPATIAL_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair {
    pub detection: usize,
    pub annotation: usize,
    /// Detected frame minus annotated frame.
    pub dframe: i64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    /// Indices of unmatched detections (false positives).
    pub false_positives: Vec<usize>,
    /// Indices of unmatched annotations (false negatives).
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }
}

fn distance(d: &Detection, a: &Annotation) -> f64 {
    (d.x as f64 - a.x as f64).hypot(d.y as f64 - a.y as f64)
}

/// All admissible `(detection, annotation)` pairs.
pub fn candidate_pairs(dets: &[Detection], anns: &[Annotation], spatial: f64, temporal: usize) -> Vec<MatchPair> {
    let mut out = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, a) in anns.iter().enumerate() {
            let dist = distance(d, a);
            if d.frame.abs_diff(a.frame) <= temporal && dist <= spatial {
                out.push(MatchPair {
                    detection: i,
                    annotation: j,
                    dframe: d.frame as i64 - a.frame as i64,
                    distance: dist,
                });
            }
        }
    }
    out
}

/// Greedy one-to-one matching in ascending `(|Δframe|, distance, detection
/// index, annotation index)` order.
pub fn match_detections(dets: &[Detection], anns: &[Annotation], spatial: f64, temporal: usize) -> MatchResult {
    let mut cands = candidate_pairs(dets, anns, spatial, temporal);
    cands.sort_by(|p, q| {
        p.dframe
            .unsigned_abs()
            .cmp(&q.dframe.unsigned_abs())
            .then(p.distance.total_cmp(&q.distance))
            .then(p.detection.cmp(&q.detection))
            .then(p.annotation.cmp(&q.annotation))
    });
    let mut det_used = vec![false; dets.len()];
    let mut ann_used = vec![false; anns.len()];
    let mut pairs = Vec::new();
    for p in cands {
        if !det_used[p.detection] && !ann_used[p.annotation] {
            det_used[p.detection] = true;
            ann_used[p.annotation] = true;
            pairs.push(p);
        }
    }
    MatchResult {
        pairs,
        false_positives: (0..dets.len()).filter(|&i| !det_used[i]).collect(),
        false_negatives: (0..anns.len()).filter(|&j| !ann_used[j]).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn scores_from_counts(tp: usize, fp: usize, fn_: usize) -> Scores {
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let (precision, recall) = (ratio(tp, fp), ratio(tp, fn_));
    Scores { precision, recall, f1: f1_score(precision, recall), tp, fp, fn_ }
}

pub fn prf1(m: &MatchResult) -> Scores {
    scores_from_counts(m.tp(), m.false_positives.len(), m.false_negatives.len())
}

/// Counts per signed frame error in `-max_abs..=max_abs`; matches beyond the
/// range land in the end bins.
pub fn timing_histogram(m: &MatchResult, max_abs: i64) -> Vec<(i64, usize)> {
    let mut bins: Vec<(i64, usize)> = (-max_abs..=max_abs).map(|d| (d, 0)).collect();
    for p in &m.pairs {
        let d = p.dframe.clamp(-max_abs, max_abs);
        bins[(d + max_abs) as usize].1 += 1;
    }
    bins
}

pub fn format_scores_csv(rows: &[(usize, Scores)]) -> String {
    let mut s = String::from("th,precision,recall,f1,tp,fp,fn\n");
    for (th, r) in rows {
        s.push_str(&format!("{},{:.6},{:.6},{:.6},{},{},{}\n", th, r.precision, r.recall, r.f1, r.tp, r.fp, r.fn_));
    }
    s
}

pub fn format_histogram_csv(bins: &[(i64, usize)]) -> String {
    let mut s = String::from("dframe,count\n");
    for (d, c) in bins {
        s.push_str(&format!("{d},{c}\n"));
    }
    s
}

pub fn write_text(text: &str, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
