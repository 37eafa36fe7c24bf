use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{assemble, windows, Example};
use crate::audio::EventRoll;
use crate::error::{Error, Result};
use crate::math::Real;
use crate::metrics::{count_accuracy, error_rate, f_score, segment_counts, CountAccuracy, SegmentCounts, SegmentScores};
use crate::model::Model;
use crate::nn::{Ctx, Mode};

/// Frame-wise outputs for one recording, row-major `T × n_outputs`, computed
/// window by window in evaluation mode.
pub fn predict_proba<T: Real>(model: &mut Model<T>, examples: &[Example], index: usize, seq_len: usize) -> Result<Vec<f64>> {
    let ex = examples.get(index).ok_or(Error::EmptyDataset)?;
    let wins: Vec<_> = windows(core::slice::from_ref(ex), seq_len);
    let batch = assemble::<T>(core::slice::from_ref(ex), &wins, seq_len)?;
    // Evaluation never draws from this stream.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = Ctx {
        mode: Mode::Eval,
        rng: &mut rng,
        lengths: Some(&batch.lengths),
    };
    let y = model.forward(batch.mbe.as_ref(), batch.gcc.as_ref(), &mut ctx)?;
    let width = model.config().n_classes;
    let mut out = Vec::with_capacity(ex.n_frames() * width);
    for (b, w) in wins.iter().enumerate() {
        let start = b * seq_len * width;
        out.extend(y.data()[start..start + w.len * width].iter().map(|v| v.to_f64()));
    }
    Ok(out)
}

/// Binarizes probabilities with `p >= threshold`.
pub fn threshold_roll(probs: &[f64], template: &EventRoll, threshold: f64) -> Result<EventRoll> {
    let activity = probs.iter().map(|&p| (p >= threshold) as u8).collect();
    EventRoll::from_activity(activity, template.n_frames(), template.hop(), template.class_map().to_vec())
}

/// Thresholded event roll for one recording.
pub fn predict<T: Real>(
    model: &mut Model<T>,
    examples: &[Example],
    index: usize,
    seq_len: usize,
    threshold: f64,
) -> Result<EventRoll> {
    let p = predict_proba(model, examples, index, seq_len)?;
    threshold_roll(&p, &examples[index].roll, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub er: f64,
    /// Percent.
    pub f: f64,
    pub totals: SegmentCounts,
    pub n_recordings: usize,
    pub n_segments: usize,
}

/// Segment-based scores pooled over all recordings.
pub fn evaluate<T: Real>(
    model: &mut Model<T>,
    examples: &[Example],
    seq_len: usize,
    threshold: f64,
    segment_s: f64,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pooled = SegmentScores::default();
    for i in 0..examples.len() {
        let pred = predict(model, examples, i, seq_len, threshold)?;
        pooled.extend(&segment_counts(&examples[i].roll, &pred, segment_s)?);
    }
    Ok(EvalReport {
        er: error_rate(&pooled),
        f: f_score(&pooled),
        totals: pooled.totals(),
        n_recordings: examples.len(),
        n_segments: pooled.segments.len(),
    })
}

/// Most probable count per frame.
pub fn predict_counts<T: Real>(model: &mut Model<T>, examples: &[Example], index: usize, seq_len: usize) -> Result<Vec<usize>> {
    let width = model.config().n_classes;
    let p = predict_proba(model, examples, index, seq_len)?;
    Ok(p.chunks(width)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub accuracy: CountAccuracy,
    /// Fraction of frames with the wrong count.
    pub frame_error: f64,
}

pub fn evaluate_counts<T: Real>(model: &mut Model<T>, examples: &[Example], seq_len: usize) -> Result<CountReport> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max = model.config().n_classes - 1;
    let (mut reference, mut pred) = (Vec::new(), Vec::new());
    for i in 0..examples.len() {
        reference.extend_from_slice(&examples[i].counts);
        pred.extend(predict_counts(model, examples, i, seq_len)?);
    }
    let wrong = reference.iter().zip(&pred).filter(|(a, b)| a != b).count();
    Ok(CountReport {
        accuracy: count_accuracy(&reference, &pred, max)?,
        frame_error: wrong as f64 / reference.len() as f64,
    })
}
