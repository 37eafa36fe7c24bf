use alloc::vec;
use alloc::vec::Vec;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::fft::{Complex, Fft};
use crate::math;

/// Short-time spectra of every channel, `coefficients[c][t][k]`.
#[derive(Clone, Debug)]
pub struct StftFrames {
    pub coefficients: Vec<Vec<Vec<Complex>>>,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl StftFrames {
    pub fn n_frames(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * math::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

/// `floor((n - window) / hop) + 1`, or zero when the signal is shorter than a window.
pub fn frame_count(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples < window {
        0
    } else {
        (n_samples - window) / hop + 1
    }
}

/// Hann-windowed STFT with the FFT size rounded up to a power of two.
pub fn stft(clip: &AudioClip, window_ms: f64, hop_ms: f64) -> Result<StftFrames> {
    let rate = clip.sample_rate() as f64;
    let window = math::round(window_ms * rate / 1000.0) as usize;
    let hop = math::round(hop_ms * rate / 1000.0) as usize;
    if window < 2 || hop == 0 {
        return Err(Error::InvalidConfig("window must span at least 2 samples".into()));
    }
    let n = clip.n_frames();
    if n < window {
        return Err(Error::ClipTooShort { samples: n, window });
    }
    let fft_size = window.next_power_of_two();
    let plan = Fft::new(fft_size);
    let win = hann(window);
    let n_frames = frame_count(n, window, hop);
    let n_bins = fft_size / 2 + 1;
    let mut buf = vec![Complex::ZERO; fft_size];
    let coefficients = clip
        .channels()
        .iter()
        .map(|x| {
            (0..n_frames)
                .map(|t| {
                    let start = t * hop;
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = if i < window {
                            Complex::new(x[start + i] * win[i], 0.0)
                        } else {
                            Complex::ZERO
                        };
                    }
                    plan.forward(&mut buf);
                    buf[..n_bins].to_vec()
                })
                .collect()
        })
        .collect();
    Ok(StftFrames {
        coefficients,
        window,
        hop,
        fft_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_framing() {
        let clip = AudioClip::silence(1, 44100, 44100);
        let s = stft(&clip, 40.0, 20.0).unwrap();
        assert_eq!(s.n_frames(), 49);
        assert_eq!(s.n_bins(), 1025);
        assert_eq!(s.fft_size, 2048);
        assert_eq!(s.window, 1764);
        assert!(s.coefficients[0].iter().flatten().all(|c| *c == Complex::ZERO));
    }

    #[test]
    fn dc_lands_in_bin_zero() {
        let a = 0.3;
        let clip = AudioClip::new(vec![vec![a; 4410]], 44100).unwrap();
        let s = stft(&clip, 40.0, 20.0).unwrap();
        let wsum: f64 = hann(1764).iter().sum();
        for frame in &s.coefficients[0] {
            assert!((frame[0].norm() - a * wsum).abs() < 1e-9);
            // Zero-padding to 2048 leaves Hann sidelobes, 1e-3 below the peak past bin 8.
            for c in &frame[8..] {
                assert!(c.norm() < 1e-3 * a * wsum);
            }
        }
    }

    #[test]
    fn short_clip_rejected() {
        let clip = AudioClip::silence(1, 100, 44100);
        assert!(matches!(
            stft(&clip, 40.0, 20.0),
            Err(Error::ClipTooShort { .. })
        ));
    }
}
