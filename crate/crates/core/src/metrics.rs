//! Segment-based polyphonic SED scoring and framewise source-count accuracy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::audio::EventRoll;
use crate::error::{Error, Result};
use crate::math;

/// Tallies for one segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub subs: usize,
    pub dele: usize,
    pub ins: usize,
    /// Active reference classes.
    pub n: usize,
}

impl SegmentCounts {
    /// Fills in substitutions, deletions and insertions from TP/FP/FN.
    pub fn from_tp_fp_fn(tp: usize, fp: usize, fn_: usize) -> Self {
        Self {
            tp,
            fp,
            fn_,
            subs: fn_.min(fp),
            dele: fn_.saturating_sub(fp),
            ins: fp.saturating_sub(fn_),
            n: tp + fn_,
        }
    }

    fn add(&mut self, o: &SegmentCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.subs += o.subs;
        self.dele += o.dele;
        self.ins += o.ins;
        self.n += o.n;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentScores {
    pub segment_s: f64,
    pub segments: Vec<SegmentCounts>,
}

impl SegmentScores {
    pub fn totals(&self) -> SegmentCounts {
        let mut t = SegmentCounts::default();
        for s in &self.segments {
            t.add(s);
        }
        t
    }

    /// Pools the segments of another recording (micro aggregation).
    pub fn extend(&mut self, other: &SegmentScores) {
        if self.segments.is_empty() {
            self.segment_s = other.segment_s;
        }
        self.segments.extend_from_slice(&other.segments);
    }
}

/// Segment index of a frame; the epsilon keeps `t·hop` that lands on a
/// boundary in the later segment.
pub fn segment_of(frame: usize, hop: f64, segment_s: f64) -> usize {
    math::floor(frame as f64 * hop / segment_s + 1e-9) as usize
}

/// Per-segment TP/FP/FN with any-frame-active segment activity; a trailing
/// partial segment counts as a full one.
pub fn segment_counts(reference: &EventRoll, pred: &EventRoll, segment_s: f64) -> Result<SegmentScores> {
    if reference.n_frames() != pred.n_frames()
        || reference.class_map() != pred.class_map()
        || reference.hop() != pred.hop()
    {
        return Err(Error::Shape(format!(
            "rolls differ: {} vs {} frames, {} vs {} classes",
            reference.n_frames(),
            pred.n_frames(),
            reference.n_classes(),
            pred.n_classes()
        )));
    }
    if !(segment_s > 0.0) {
        return Err(Error::InvalidConfig("segment length must be positive".into()));
    }
    let n_frames = reference.n_frames();
    let n_classes = reference.n_classes();
    let hop = reference.hop();
    let n_seg = if n_frames == 0 { 0 } else { segment_of(n_frames - 1, hop, segment_s) + 1 };
    let mut ref_act = vec![false; n_seg * n_classes];
    let mut pred_act = vec![false; n_seg * n_classes];
    for t in 0..n_frames {
        let k = segment_of(t, hop, segment_s);
        for c in 0..n_classes {
            ref_act[k * n_classes + c] |= reference.get(t, c);
            pred_act[k * n_classes + c] |= pred.get(t, c);
        }
    }
    let segments = (0..n_seg)
        .map(|k| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for c in 0..n_classes {
                match (ref_act[k * n_classes + c], pred_act[k * n_classes + c]) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            SegmentCounts::from_tp_fp_fn(tp, fp, fn_)
        })
        .collect();
    Ok(SegmentScores { segment_s, segments })
}

/// F-score in percent; 100 when there is nothing to detect and nothing detected.
pub fn f_score(scores: &SegmentScores) -> f64 {
    let t = scores.totals();
    let denom = 2 * t.tp + t.fp + t.fn_;
    if denom == 0 {
        100.0
    } else {
        100.0 * (2 * t.tp) as f64 / denom as f64
    }
}

/// Error rate `(S + D + I) / N`; with no reference events it reduces to the
/// insertion count.
pub fn error_rate(scores: &SegmentScores) -> f64 {
    let t = scores.totals();
    (t.subs + t.dele + t.ins) as f64 / t.n.max(1) as f64
}

/// Framewise source-count accuracy per polyphony level, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountAccuracy {
    /// `None` for levels absent from the reference.
    pub per_level: Vec<Option<f64>>,
    /// Unweighted mean over present levels.
    pub average: f64,
}

pub fn count_accuracy(reference: &[usize], pred: &[usize], max_polyphony: usize) -> Result<CountAccuracy> {
    if reference.len() != pred.len() {
        return Err(Error::MismatchedLengths(reference.len(), pred.len()));
    }
    let mut hits = vec![0usize; max_polyphony + 1];
    let mut totals = vec![0usize; max_polyphony + 1];
    for (&r, &p) in reference.iter().zip(pred) {
        for c in [r, p] {
            if c > max_polyphony {
                return Err(Error::CountOutOfRange {
                    count: c,
                    max: max_polyphony,
                });
            }
        }
        totals[r] += 1;
        hits[r] += (r == p) as usize;
    }
    let per_level: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| 100.0 * h as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_level.iter().flatten().copied().collect();
    let average = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(CountAccuracy { per_level, average })
}
