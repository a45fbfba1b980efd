//! Frame-level NMI between reference phones and discovered units, and
//! boundary precision/recall/F with a time tolerance.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Alignments, Segment};

pub const DEFAULT_TOLERANCE_MS: f64 = 20.0;

/// Counts with reference labels on rows and hypothesis labels on columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub ref_labels: Vec<String>,
    pub hyp_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("confusion matrix must be a non-empty rectangle".into()));
        }
        Ok(Self {
            ref_labels: (0..counts.len()).map(|i| i.to_string()).collect(),
            hyp_labels: (0..cols).map(|j| j.to_string()).collect(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn label_at(segments: &[Segment], t: f64) -> Option<&str> {
    let i = segments.partition_point(|s| s.end_ms <= t);
    segments
        .get(i)
        .filter(|s| s.start_ms <= t && t < s.end_ms)
        .map(|s| s.label.as_str())
}

/// Tallies reference and hypothesis labels at each frame centre, over the
/// utterances present in both. Frames not covered by both are skipped.
pub fn frame_confusion(reference: &Alignments, hypothesis: &Alignments, frame_shift_ms: f64) -> Result<ConfusionMatrix> {
    if !(frame_shift_ms > 0.0) {
        return Err(Error::InvalidInput("frame shift must be positive".into()));
    }
    let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (id, r) in reference {
        let Some(h) = hypothesis.get(id) else { continue };
        let end = r.iter().map(|s| s.end_ms).fold(0.0, f64::max);
        let mut k = 0usize;
        loop {
            let t = (k as f64 + 0.5) * frame_shift_ms;
            if t >= end {
                break;
            }
            if let (Some(a), Some(b)) = (label_at(r, t), label_at(h, t)) {
                *pairs.entry((a.to_string(), b.to_string())).or_default() += 1;
            }
            k += 1;
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("reference and hypothesis share no scored frames".into()));
    }
    let mut ref_labels: Vec<String> = pairs.keys().map(|(a, _)| a.clone()).collect();
    ref_labels.dedup();
    let mut hyp_labels: Vec<String> = pairs.keys().map(|(_, b)| b.clone()).collect();
    hyp_labels.sort();
    hyp_labels.dedup();
    let ri: BTreeMap<&str, usize> = ref_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let hi: BTreeMap<&str, usize> = hyp_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0u64; hyp_labels.len()]; ref_labels.len()];
    for ((a, b), c) in &pairs {
        counts[ri[a.as_str()]][hi[b.as_str()]] = *c;
    }
    Ok(ConfusionMatrix {
        ref_labels,
        hyp_labels,
        counts,
    })
}

fn entropy(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `200 · I(P; U) / (H(P) + H(U))`, in percent.
pub fn nmi(confusion: &ConfusionMatrix) -> Result<f64> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::InvalidInput("confusion matrix has no counts".into()));
    }
    let n = total as f64;
    let rows: Vec<u64> = confusion.counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..confusion.counts[0].len())
        .map(|j| confusion.counts.iter().map(|r| r[j]).sum())
        .collect();
    let h_p = entropy(rows.iter().copied(), n);
    let h_u = entropy(cols.iter().copied(), n);
    if h_p + h_u == 0.0 {
        warn!("NMI undefined for a single non-empty cell; reporting 0");
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in confusion.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((200.0 * mi / (h_p + h_u)).clamp(0.0, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScores {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub n_ref: usize,
    pub n_hyp: usize,
    pub n_matched: usize,
}

impl BoundaryScores {
    fn from_counts(n_ref: usize, n_hyp: usize, n_matched: usize) -> Self {
        let precision = if n_hyp == 0 { 0.0 } else { n_matched as f64 / n_hyp as f64 };
        let recall = if n_ref == 0 { 0.0 } else { n_matched as f64 / n_ref as f64 };
        let fscore = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            fscore,
            n_ref,
            n_hyp,
            n_matched,
        }
    }
}

/// Number of one-to-one matches within `tolerance_ms`, scanning both sorted
/// lists left to right.
pub fn match_boundaries(reference: &[f64], hypothesis: &[f64], tolerance_ms: f64) -> usize {
    let mut r: Vec<f64> = reference.to_vec();
    let mut h: Vec<f64> = hypothesis.to_vec();
    r.sort_by(f64::total_cmp);
    h.sort_by(f64::total_cmp);
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < r.len() && j < h.len() {
        if (r[i] - h[j]).abs() <= tolerance_ms + 1e-9 {
            hits += 1;
            i += 1;
            j += 1;
        } else if h[j] < r[i] {
            j += 1;
        } else {
            i += 1;
        }
    }
    hits
}

pub fn boundary_prf(reference: &[f64], hypothesis: &[f64], tolerance_ms: f64) -> BoundaryScores {
    let hits = match_boundaries(reference, hypothesis, tolerance_ms);
    BoundaryScores::from_counts(reference.len(), hypothesis.len(), hits)
}

/// Interior segment edges; the utterance start and end are excluded.
pub fn interior_boundaries(segments: &[Segment]) -> Vec<f64> {
    let Some(first) = segments.iter().map(|s| s.start_ms).reduce(f64::min) else {
        return Vec::new();
    };
    let last = segments.iter().map(|s| s.end_ms).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = segments
        .iter()
        .flat_map(|s| [s.start_ms, s.end_ms])
        .filter(|&t| t != first && t != last)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Boundary scores pooled over the utterances present in both alignments.
pub fn boundary_fscore(reference: &Alignments, hypothesis: &Alignments, tolerance_ms: f64) -> BoundaryScores {
    let (mut n_ref, mut n_hyp, mut hits) = (0, 0, 0);
    for (id, r) in reference {
        let Some(h) = hypothesis.get(id) else { continue };
        let rb = interior_boundaries(r);
        let hb = interior_boundaries(h);
        n_ref += rb.len();
        n_hyp += hb.len();
        hits += match_boundaries(&rb, &hb, tolerance_ms);
    }
    BoundaryScores::from_counts(n_ref, n_hyp, hits)
}

/// The metrics object printed by the evaluation command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nmi: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub n_frames: u64,
    pub n_ref_boundaries: usize,
    pub n_hyp_boundaries: usize,
}

pub fn evaluate(reference: &Alignments, hypothesis: &Alignments, frame_shift_ms: f64, tolerance_ms: f64) -> Result<Metrics> {
    let cm = frame_confusion(reference, hypothesis, frame_shift_ms)?;
    let b = boundary_fscore(reference, hypothesis, tolerance_ms);
    Ok(Metrics {
        nmi: nmi(&cm)?,
        precision: b.precision,
        recall: b.recall,
        fscore: b.fscore,
        n_frames: cm.total(),
        n_ref_boundaries: b.n_ref,
        n_hyp_boundaries: b.n_hyp,
    })
}
