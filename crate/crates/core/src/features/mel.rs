use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{stft, FeatureConfig, FeatureKind, FeatureTensor};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::math;

/// Energy floor applied before the logarithm.
pub const MBE_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * math::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (math::pow(10.0, m / 2595.0) - 1.0)
}

/// Triangular filters over the one-sided spectrum, `weights[m][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<Vec<f64>>,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }

    /// Filter energies for one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Builds `n_mels` triangular filters with centers equally spaced in mel
/// between `f_min` and `f_max` (clamped to Nyquist).
pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = rate as f64 / 2.0;
    let f_max = f_max.min(nyquist);
    if !(f_max > f_min) || f_min < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "mel range {f_min}..{f_max} Hz is empty"
        )));
    }
    if n_mels == 0 {
        return Err(Error::InvalidConfig("n_mels must be positive".into()));
    }
    let n_bins = fft_size / 2 + 1;
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = rate as f64 / fft_size as f64;
    let weights = (0..n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut row: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect();
            // A filter narrower than one bin still gets the nearest bin.
            if row.iter().all(|&w| w == 0.0) {
                let k = (math::round(c / bin_hz) as usize).min(n_bins - 1);
                row[k] = 1.0;
            }
            row
        })
        .collect();
    Ok(MelFilterbank {
        weights,
        f_min,
        f_max,
    })
}

/// Per-channel log mel-band energies, `T × n_mels × C`.
pub fn log_mbe(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureTensor> {
    let spec = stft(clip, cfg.window_ms, cfg.hop_ms)?;
    let fb = mel_filterbank(cfg.n_mels, spec.fft_size, clip.sample_rate(), cfg.f_min, cfg.f_max)?;
    let n_frames = spec.n_frames();
    let n_ch = clip.n_channels();
    let labels = (0..n_ch).map(|c| format!("ch{c}")).collect();
    let mut out = FeatureTensor::zeros(FeatureKind::Mbe, cfg.hop_seconds(), labels, n_frames, cfg.n_mels);
    let mut power = vec![0.0; spec.n_bins()];
    for (c, frames) in spec.coefficients.iter().enumerate() {
        for (t, frame) in frames.iter().enumerate() {
            for (p, x) in power.iter_mut().zip(frame) {
                *p = x.norm_sqr();
            }
            for (b, e) in fb.apply(&power).into_iter().enumerate() {
                out.set(t, b, c, math::ln(e.max(MBE_FLOOR)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_700_hz() {
        let expect = 2595.0 * math::log10(2.0);
        assert!((hz_to_mel(700.0) - expect).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn forty_rows_regardless_of_fft_size() {
        for n in [512, 1024, 2048, 4096] {
            let fb = mel_filterbank(40, n, 44100, 0.0, 22500.0).unwrap();
            assert_eq!(fb.n_mels(), 40);
            assert_eq!(fb.f_max, 22050.0);
            for row in &fb.weights {
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!(row.iter().sum::<f64>() > 0.0);
                let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
                assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "contiguous support");
            }
        }
    }

    #[test]
    fn no_coverage_gaps_between_centers() {
        let fb = mel_filterbank(40, 2048, 44100, 0.0, 22050.0).unwrap();
        let bin_hz = 44100.0 / 2048.0;
        let first_center = mel_to_hz(hz_to_mel(22050.0) / 41.0);
        let last_center = mel_to_hz(hz_to_mel(22050.0) * 40.0 / 41.0);
        for k in 0..1025 {
            let f = k as f64 * bin_hz;
            if f >= first_center && f <= last_center {
                let total: f64 = fb.weights.iter().map(|r| r[k]).sum();
                assert!(total > 0.0, "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn empty_range_rejected() {
        assert!(mel_filterbank(40, 2048, 44100, 1000.0, 1000.0).is_err());
    }

    #[test]
    fn silence_is_floored() {
        let clip = AudioClip::silence(2, 4410, 44100);
        let f = log_mbe(&clip, &FeatureConfig::default()).unwrap();
        assert_eq!(f.shape(), (4, 40, 2));
        assert!(f.data().iter().all(|&x| x == math::ln(MBE_FLOOR)));
    }
}
