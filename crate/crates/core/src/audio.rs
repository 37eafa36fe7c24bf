//! Audio buffers, event annotations and frame-level event rolls.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Multichannel PCM audio, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.len() != first.len()) {
                return Err(Error::RaggedChannels);
            }
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn silence(n_channels: usize, n_frames: usize, sample_rate: u32) -> Self {
        Self {
            channels: vec![vec![0.0; n_frames]; n_channels],
            sample_rate,
        }
    }

    /// Builds a clip from frame-major interleaved samples.
    pub fn from_interleaved(samples: &[f64], n_channels: usize, sample_rate: u32) -> Result<Self> {
        if n_channels == 0 || samples.len() % n_channels != 0 {
            return Err(Error::RaggedChannels);
        }
        let n = samples.len() / n_channels;
        let channels = (0..n_channels)
            .map(|c| (0..n).map(|i| samples[i * n_channels + c]).collect())
            .collect();
        Self::new(channels, sample_rate)
    }

    pub fn interleaved(&self) -> Vec<f64> {
        let n = self.n_frames();
        let c = self.n_channels();
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            for ch in &self.channels {
                out.push(ch[i]);
            }
        }
        out
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames() == 0 || self.n_channels() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f64, |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn scale(&mut self, gain: f64) {
        for x in self.channels.iter_mut().flatten() {
            *x *= gain;
        }
    }

    /// Fails if any sample magnitude exceeds 1.0 or is not finite.
    pub fn check_range(&self) -> Result<()> {
        match self
            .channels
            .iter()
            .flatten()
            .find(|x| !x.is_finite() || x.abs() > 1.0)
        {
            Some(&x) => Err(Error::AmplitudeOutOfRange(x)),
            None => Ok(()),
        }
    }

    /// Arithmetic mean of all channels per sample.
    pub fn mixdown(&self) -> AudioClip {
        let n = self.n_frames();
        let c = self.n_channels().max(1) as f64;
        let mono = (0..n)
            .map(|i| self.channels.iter().map(|ch| ch[i]).sum::<f64>() / c)
            .collect();
        AudioClip {
            channels: vec![mono],
            sample_rate: self.sample_rate,
        }
    }
}

/// One annotated sound event occurrence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventInstance {
    pub label: String,
    /// Seconds.
    pub onset: f64,
    /// Seconds.
    pub offset: f64,
    /// Degrees in [-180, 180).
    pub azimuth: f64,
    /// Degrees in [-90, 90].
    pub elevation: f64,
    /// Linear amplitude scale.
    pub gain: f64,
}

impl EventInstance {
    /// An event with no direction and unit gain.
    pub fn new(label: impl Into<String>, onset: f64, offset: f64) -> Self {
        Self {
            label: label.into(),
            onset,
            offset,
            azimuth: 0.0,
            elevation: 0.0,
            gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.offset.is_finite()) || self.offset <= self.onset {
            return Err(Error::InvalidEvent(format!(
                "offset {} must exceed onset {}",
                self.offset, self.onset
            )));
        }
        if !(self.gain > 0.0) {
            return Err(Error::InvalidEvent(format!("gain {} must be positive", self.gain)));
        }
        if !(-180.0..180.0).contains(&self.azimuth) || !(-90.0..=90.0).contains(&self.elevation) {
            return Err(Error::InvalidEvent(format!(
                "direction ({}, {}) out of range",
                self.azimuth, self.elevation
            )));
        }
        Ok(())
    }

    /// True if the half-open intervals [onset, offset) intersect with positive length.
    pub fn overlaps(&self, start: f64, end: f64) -> bool {
        self.onset.max(start) < self.offset.min(end)
    }
}

/// Binary frame × class activity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRoll {
    activity: Vec<u8>,
    n_frames: usize,
    hop: f64,
    class_map: Vec<String>,
}

impl EventRoll {
    pub fn zeros(n_frames: usize, hop: f64, class_map: Vec<String>) -> Result<Self> {
        check_class_map(&class_map)?;
        Ok(Self {
            activity: vec![0; n_frames * class_map.len()],
            n_frames,
            hop,
            class_map,
        })
    }

    /// Builds a roll from a row-major 0/1 matrix.
    pub fn from_activity(
        activity: Vec<u8>,
        n_frames: usize,
        hop: f64,
        class_map: Vec<String>,
    ) -> Result<Self> {
        check_class_map(&class_map)?;
        if activity.len() != n_frames * class_map.len() {
            return Err(Error::Shape(format!(
                "activity has {} entries, expected {}",
                activity.len(),
                n_frames * class_map.len()
            )));
        }
        if activity.iter().any(|&a| a > 1) {
            return Err(Error::Shape("roll entries must be 0 or 1".into()));
        }
        Ok(Self {
            activity,
            n_frames,
            hop,
            class_map,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn hop(&self) -> f64 {
        self.hop
    }

    pub fn class_map(&self) -> &[String] {
        &self.class_map
    }

    pub fn get(&self, frame: usize, class: usize) -> bool {
        self.activity[frame * self.class_map.len() + class] != 0
    }

    pub fn set(&mut self, frame: usize, class: usize, active: bool) {
        let n = self.class_map.len();
        self.activity[frame * n + class] = active as u8;
    }

    pub fn row(&self, frame: usize) -> &[u8] {
        let n = self.class_map.len();
        &self.activity[frame * n..(frame + 1) * n]
    }

    pub fn activity(&self) -> &[u8] {
        &self.activity
    }

    /// Number of active frames per class.
    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.n_classes()];
        for t in 0..self.n_frames {
            for (c, s) in sums.iter_mut().enumerate() {
                *s += self.get(t, c) as usize;
            }
        }
        sums
    }
}

fn check_class_map(class_map: &[String]) -> Result<()> {
    for (i, a) in class_map.iter().enumerate() {
        if class_map[..i].contains(a) {
            return Err(Error::InvalidConfig(format!("duplicate class {a:?}")));
        }
    }
    Ok(())
}

/// Frame range `[first, last)` a time interval can touch.
fn frame_span(onset: f64, offset: f64, hop: f64, n_frames: usize) -> (usize, usize) {
    let first = math::floor(onset / hop).max(0.0) as usize;
    let last = (math::ceil(offset / hop).max(0.0) as usize + 1).min(n_frames);
    (first.saturating_sub(1).min(n_frames), last)
}

/// Rasterizes events into a roll; frame `t` spans `[t·hop, (t+1)·hop)` and
/// any positive-length overlap marks it active.
pub fn event_roll(
    events: &[EventInstance],
    class_map: &[String],
    hop: f64,
    n_frames: usize,
) -> Result<EventRoll> {
    if !(hop > 0.0) {
        return Err(Error::InvalidConfig("hop must be positive".into()));
    }
    let mut roll = EventRoll::zeros(n_frames, hop, class_map.to_vec())?;
    for ev in events {
        let class = class_map
            .iter()
            .position(|c| *c == ev.label)
            .ok_or_else(|| Error::UnknownLabel(ev.label.clone()))?;
        let (first, last) = frame_span(ev.onset, ev.offset, hop, n_frames);
        for t in first..last {
            if ev.overlaps(t as f64 * hop, (t + 1) as f64 * hop) {
                roll.set(t, class, true);
            }
        }
    }
    Ok(roll)
}

/// Number of event instances overlapping each frame (the source-count target).
pub fn source_counts(events: &[EventInstance], hop: f64, n_frames: usize) -> Vec<usize> {
    let mut counts = vec![0; n_frames];
    for ev in events {
        let (first, last) = frame_span(ev.onset, ev.offset, hop, n_frames);
        for (t, c) in counts.iter_mut().enumerate().take(last).skip(first) {
            if ev.overlaps(t as f64 * hop, (t + 1) as f64 * hop) {
                *c += 1;
            }
        }
    }
    counts
}

/// Largest number of simultaneously active events over all instants.
pub fn max_polyphony(events: &[EventInstance]) -> usize {
    // Offsets sort before onsets at equal times: intervals are half-open.
    let mut edges: Vec<(f64, i32)> = events
        .iter()
        .flat_map(|e| [(e.onset, 1), (e.offset, -1)])
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cur = 0i32;
    let mut best = 0i32;
    for (_, d) in edges {
        cur += d;
        best = best.max(cur);
    }
    best as usize
}
