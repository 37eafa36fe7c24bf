//! Frame-level input features: per-channel log mel-band energies and
//! multi-resolution GCC-PHAT per channel pair.

mod gcc;
mod mel;
mod normalize;
mod stft;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gcc::{channel_pairs, gcc_multires, gcc_phat_pair, gcc_phat_spectra, lag_of_index, GCC_LAGS, MIN_LAG};
pub use mel::{hz_to_mel, log_mbe, mel_filterbank, mel_to_hz, MelFilterbank, MBE_FLOOR};
pub use normalize::{normalize_features, FeatureStats};
pub use stft::{frame_count, hann, stft, StftFrames};

/// Which feature a tensor holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mbe,
    Gcc,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mbe => "mbe",
            FeatureKind::Gcc => "gcc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mbe" => Some(FeatureKind::Mbe),
            "gcc" => Some(FeatureKind::Gcc),
            _ => None,
        }
    }

    /// Bin-axis length: 40 mel bands or 60 lags.
    pub fn bins(self) -> usize {
        match self {
            FeatureKind::Mbe => 40,
            FeatureKind::Gcc => GCC_LAGS,
        }
    }
}

/// Dense `time × bins × depth` tensor, row-major with depth fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub kind: FeatureKind,
    /// Seconds per frame.
    pub hop: f64,
    /// One label per depth slice (channel or pair@resolution).
    pub labels: Vec<String>,
    n_frames: usize,
    n_bins: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(
        kind: FeatureKind,
        hop: f64,
        labels: Vec<String>,
        n_frames: usize,
        n_bins: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_frames * n_bins * labels.len() {
            return Err(Error::Shape(format!(
                "{} values for {}x{}x{}",
                data.len(),
                n_frames,
                n_bins,
                labels.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} feature ({x})", kind.name())));
        }
        Ok(Self {
            kind,
            hop,
            labels,
            n_frames,
            n_bins,
            data,
        })
    }

    pub fn zeros(kind: FeatureKind, hop: f64, labels: Vec<String>, n_frames: usize, n_bins: usize) -> Self {
        let len = n_frames * n_bins * labels.len();
        Self {
            kind,
            hop,
            labels,
            n_frames,
            n_bins,
            data: vec![0.0; len],
        }
    }

    /// `(time, bins, depth)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_frames, self.n_bins, self.labels.len())
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn get(&self, t: usize, b: usize, d: usize) -> f64 {
        self.data[(t * self.n_bins + b) * self.labels.len() + d]
    }

    #[inline]
    pub fn set(&mut self, t: usize, b: usize, d: usize, v: f64) {
        let depth = self.labels.len();
        self.data[(t * self.n_bins + b) * depth + d] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major `bins × depth` slab for one frame.
    pub fn frame(&self, t: usize) -> &[f64] {
        let stride = self.n_bins * self.labels.len();
        &self.data[t * stride..(t + 1) * stride]
    }
}

/// Framing and filterbank parameters shared by all feature kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    /// Clamped to Nyquist when larger.
    pub f_max: f64,
    pub gcc_resolutions_ms: Vec<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_ms: 40.0,
            hop_ms: 20.0,
            n_mels: 40,
            f_min: 0.0,
            f_max: 22500.0,
            gcc_resolutions_ms: vec![120.0, 240.0, 480.0],
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self, rate: u32) -> usize {
        crate::math::round(self.window_ms * rate as f64 / 1000.0) as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        crate::math::round(self.hop_ms * rate as f64 / 1000.0) as usize
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_ms / 1000.0
    }
}
