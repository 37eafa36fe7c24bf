use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::EventRoll;
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::math::Real;
use crate::nn::Tensor;

/// One recording's inputs and frame-aligned targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub mbe: Option<FeatureTensor>,
    pub gcc: Option<FeatureTensor>,
    pub roll: EventRoll,
    /// Simultaneously active events per frame.
    pub counts: Vec<usize>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        mbe: Option<FeatureTensor>,
        gcc: Option<FeatureTensor>,
        roll: EventRoll,
        counts: Vec<usize>,
    ) -> Result<Self> {
        let n = roll.n_frames();
        for (name, t) in [("mbe", mbe.as_ref().map(|f| f.n_frames())), ("gcc", gcc.as_ref().map(|f| f.n_frames()))] {
            if let Some(t) = t {
                if t != n {
                    return Err(Error::Shape(format!("{name} has {t} frames, targets have {n}")));
                }
            }
        }
        if counts.len() != n {
            return Err(Error::MismatchedLengths(counts.len(), n));
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            id: id.into(),
            mbe,
            gcc,
            roll,
            counts,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.roll.n_frames()
    }
}

/// Frames `[start, start + len)` of one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub example: usize,
    pub start: usize,
    pub len: usize,
}

/// Non-overlapping `seq_len` windows in recording order; the last window of
/// each recording may be short.
pub fn windows(examples: &[Example], seq_len: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let n = ex.n_frames();
        let mut start = 0;
        while start < n {
            out.push(Window {
                example: i,
                start,
                len: seq_len.min(n - start),
            });
            start += seq_len;
        }
    }
    out
}

/// Shuffles all windows and groups them into batches.
pub fn make_batches<R: Rng + ?Sized>(
    examples: &[Example],
    seq_len: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Window>>> {
    if seq_len == 0 || batch_size == 0 {
        return Err(Error::InvalidConfig("sequence length and batch size must be positive".into()));
    }
    let mut w = windows(examples, seq_len);
    if w.is_empty() {
        return Err(Error::EmptyDataset);
    }
    w.shuffle(rng);
    Ok(w.chunks(batch_size).map(<[Window]>::to_vec).collect())
}

/// Dense, zero-padded tensors for one batch of windows.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub mbe: Option<Tensor<T>>,
    pub gcc: Option<Tensor<T>>,
    pub lengths: Vec<usize>,
    /// Per `(item, frame)` row: inside the item's valid length.
    pub valid: Vec<bool>,
    /// `[B, seq_len, n_classes]` activity targets.
    pub roll: Tensor<T>,
    /// Per-row source counts (zero on padded rows).
    pub counts: Vec<usize>,
}

fn stack<T: Real>(
    examples: &[Example],
    batch: &[Window],
    seq_len: usize,
    pick: impl Fn(&Example) -> Option<&FeatureTensor>,
) -> Result<Option<Tensor<T>>> {
    let first = match pick(&examples[batch[0].example]) {
        Some(f) => f,
        None => return Ok(None),
    };
    let (bins, depth) = (first.n_bins(), first.depth());
    let frame = bins * depth;
    let mut data = vec![T::ZERO; batch.len() * seq_len * frame];
    for (b, w) in batch.iter().enumerate() {
        let f = pick(&examples[w.example]).ok_or_else(|| Error::Shape("examples disagree on feature kinds".into()))?;
        if (f.n_bins(), f.depth()) != (bins, depth) {
            return Err(Error::Shape(format!(
                "feature shape {}x{} differs from {bins}x{depth}",
                f.n_bins(),
                f.depth()
            )));
        }
        let src = &f.data()[w.start * frame..(w.start + w.len) * frame];
        let dst = &mut data[b * seq_len * frame..];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = T::from_f64(*s);
        }
    }
    Tensor::from_vec(&[batch.len(), seq_len, bins, depth], data).map(Some)
}

pub fn assemble<T: Real>(examples: &[Example], batch: &[Window], seq_len: usize) -> Result<Batch<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mbe = stack(examples, batch, seq_len, |e| e.mbe.as_ref())?;
    let gcc = stack(examples, batch, seq_len, |e| e.gcc.as_ref())?;
    let n_classes = examples[batch[0].example].roll.n_classes();
    let mut roll = Tensor::zeros(&[batch.len(), seq_len, n_classes]);
    let mut counts = vec![0; batch.len() * seq_len];
    let mut valid = vec![false; batch.len() * seq_len];
    for (b, w) in batch.iter().enumerate() {
        let ex = &examples[w.example];
        if ex.roll.n_classes() != n_classes {
            return Err(Error::Shape("examples disagree on class count".into()));
        }
        for t in 0..w.len {
            let row = b * seq_len + t;
            valid[row] = true;
            counts[row] = ex.counts[w.start + t];
            for (c, &a) in ex.roll.row(w.start + t).iter().enumerate() {
                roll.data_mut()[row * n_classes + c] = T::from_f64(a as f64);
            }
        }
    }
    Ok(Batch {
        mbe,
        gcc,
        lengths: batch.iter().map(|w| w.len).collect(),
        valid,
        roll,
        counts,
    })
}
