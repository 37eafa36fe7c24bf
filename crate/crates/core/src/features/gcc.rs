use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{frame_count, hann, FeatureConfig, FeatureKind, FeatureTensor};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::fft::{Complex, Fft};
use crate::math;

/// Lags per resolution.
pub const GCC_LAGS: usize = 60;
/// Lag of column 0; column `j` holds lag `j + MIN_LAG`, so lags run -29..=30.
pub const MIN_LAG: i32 = -29;
/// Bins with `|X1|·|X2|` below this contribute nothing.
const DEGENERATE: f64 = 1e-12;

#[inline]
pub fn lag_of_index(j: usize) -> i32 {
    j as i32 + MIN_LAG
}

/// Unordered channel pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn channel_pairs(n_channels: usize) -> Vec<(usize, usize)> {
    (0..n_channels)
        .flat_map(|i| (i + 1..n_channels).map(move |j| (i, j)))
        .collect()
}

/// Evaluates `R(Δ) = Re Σ_{k<K} X1·X2* / (|X1||X2|) · e^{i2πkΔ/N}` at the 60
/// lags from two full-length (`N`-point) spectra of real frames.
///
/// Positive `Δ` peaks when channel 1 lags channel 2 (`x1[n] = x2[n - Δ]`).
pub fn gcc_phat_spectra(x1: &[Complex], x2: &[Complex], plan: &Fft) -> [f64; GCC_LAGS] {
    let n = plan.len();
    debug_assert_eq!(x1.len(), n);
    debug_assert_eq!(x2.len(), n);
    let mut g: Vec<Complex> = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| {
            let mag = a.norm() * b.norm();
            if mag < DEGENERATE {
                Complex::ZERO
            } else {
                (*a * b.conj()).scale(1.0 / mag)
            }
        })
        .collect();
    // For real frames G is Hermitian, so the one-sided sum equals half the
    // full inverse DFT plus the (real) DC and Nyquist terms.
    let dc = g[0].re;
    let nyq = g[n / 2].re;
    plan.inverse(&mut g);
    let mut out = [0.0; GCC_LAGS];
    for (j, r) in out.iter_mut().enumerate() {
        let lag = lag_of_index(j);
        let idx = lag.rem_euclid(n as i32) as usize;
        let alt = if lag % 2 == 0 { nyq } else { -nyq };
        *r = 0.5 * (g[idx].re + dc + alt);
    }
    out
}

/// Full spectra of real frames, two frames per complex transform.
fn real_spectra(frames: &[Vec<f64>], plan: &Fft) -> Vec<Vec<Complex>> {
    let n = plan.len();
    let mut out = Vec::with_capacity(frames.len());
    let mut buf = vec![Complex::ZERO; n];
    for chunk in frames.chunks(2) {
        let a = &chunk[0];
        let b = chunk.get(1);
        for (i, z) in buf.iter_mut().enumerate() {
            *z = Complex::new(a[i], b.map_or(0.0, |b| b[i]));
        }
        plan.forward(&mut buf);
        if b.is_none() {
            out.push(buf.clone());
            continue;
        }
        let mut sa = vec![Complex::ZERO; n];
        let mut sb = vec![Complex::ZERO; n];
        for k in 0..n {
            let zk = buf[k];
            let zc = buf[(n - k) % n].conj();
            let s = zk + zc;
            let d = zk - zc;
            sa[k] = s.scale(0.5);
            sb[k] = Complex::new(0.5 * d.im, -0.5 * d.re);
        }
        out.push(sa);
        out.push(sb);
    }
    out
}

/// Hann-windowed frame of `width` samples centered on `center`, zero outside the signal.
fn centered_frame(x: &[f64], center: usize, width: usize, win: &[f64], fft_size: usize) -> Vec<f64> {
    let start = center as isize - (width / 2) as isize;
    let mut f = vec![0.0; fft_size];
    for i in 0..width {
        let idx = start + i as isize;
        if idx >= 0 && (idx as usize) < x.len() {
            f[i] = x[idx as usize] * win[i];
        }
    }
    f
}

struct Framing {
    n_frames: usize,
    hop: usize,
    half_window: usize,
    width: usize,
    fft_size: usize,
}

fn framing(n_samples: usize, rate: u32, resolution_ms: f64, cfg: &FeatureConfig) -> Result<Framing> {
    let window = cfg.window_samples(rate);
    let hop = cfg.hop_samples(rate);
    let width = math::round(resolution_ms * rate as f64 / 1000.0) as usize;
    if width < 2 || hop == 0 {
        return Err(Error::InvalidConfig(format!("gcc resolution {resolution_ms} ms too short")));
    }
    if n_samples < window {
        return Err(Error::ClipTooShort {
            samples: n_samples,
            window,
        });
    }
    Ok(Framing {
        n_frames: frame_count(n_samples, window, hop),
        hop,
        half_window: window / 2,
        width,
        fft_size: width.next_power_of_two(),
    })
}

/// GCC-PHAT between two channels at one resolution, one 60-lag row per
/// feature frame. Coarse windows are centered on the feature frame grid.
pub fn gcc_phat_pair(
    x1: &[f64],
    x2: &[f64],
    rate: u32,
    resolution_ms: f64,
    cfg: &FeatureConfig,
) -> Result<Vec<[f64; GCC_LAGS]>> {
    if x1.len() != x2.len() {
        return Err(Error::MismatchedLengths(x1.len(), x2.len()));
    }
    let fr = framing(x1.len(), rate, resolution_ms, cfg)?;
    let plan = Fft::new(fr.fft_size);
    let win = hann(fr.width);
    let mut rows = Vec::with_capacity(fr.n_frames);
    for t in (0..fr.n_frames).step_by(2) {
        let s1 = frame_pair_spectra(x1, t, &fr, &win, &plan);
        let s2 = frame_pair_spectra(x2, t, &fr, &win, &plan);
        for (a, b) in s1.iter().zip(&s2) {
            rows.push(gcc_phat_spectra(a, b, &plan));
        }
    }
    Ok(rows)
}

/// Spectra of frames `t` and `t + 1` of one channel from one transform.
fn frame_pair_spectra(x: &[f64], t: usize, fr: &Framing, win: &[f64], plan: &Fft) -> Vec<Vec<Complex>> {
    let frames: Vec<Vec<f64>> = (t..(t + 2).min(fr.n_frames))
        .map(|u| centered_frame(x, u * fr.hop + fr.half_window, fr.width, win, fr.fft_size))
        .collect();
    real_spectra(&frames, plan)
}

/// Multi-resolution GCC-PHAT for every channel pair, `T × 60 × 3·C(C,2)`.
/// Depth is ordered pair-major, resolution-minor.
pub fn gcc_multires(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureTensor> {
    let n_ch = clip.n_channels();
    if n_ch < 2 {
        return Err(Error::ChannelCount {
            expected: "at least 2",
            got: n_ch,
        });
    }
    let pairs = channel_pairs(n_ch);
    let n_res = cfg.gcc_resolutions_ms.len();
    let labels: Vec<String> = pairs
        .iter()
        .flat_map(|&(i, j)| {
            cfg.gcc_resolutions_ms
                .iter()
                .map(move |r| format!("{i}-{j}@{r}ms"))
        })
        .collect();
    let n_samples = clip.n_frames();
    let n_frames = frame_count(n_samples, cfg.window_samples(clip.sample_rate()), cfg.hop_samples(clip.sample_rate()));
    let mut out = FeatureTensor::zeros(FeatureKind::Gcc, cfg.hop_seconds(), labels, n_frames, GCC_LAGS);
    for (ri, &res) in cfg.gcc_resolutions_ms.iter().enumerate() {
        let fr = framing(n_samples, clip.sample_rate(), res, cfg)?;
        let plan = Fft::new(fr.fft_size);
        let win = hann(fr.width);
        for t in (0..fr.n_frames).step_by(2) {
            let spectra: Vec<Vec<Vec<Complex>>> = clip
                .channels()
                .iter()
                .map(|x| frame_pair_spectra(x, t, &fr, &win, &plan))
                .collect();
            for k in 0..spectra[0].len() {
                for (pi, &(i, j)) in pairs.iter().enumerate() {
                    let row = gcc_phat_spectra(&spectra[i][k], &spectra[j][k], &plan);
                    for (b, &v) in row.iter().enumerate() {
                        out.set(t + k, b, pi * n_res + ri, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    /// Direct summation over the one-sided bins.
    fn direct(x1: &[Complex], x2: &[Complex], n: usize) -> [f64; GCC_LAGS] {
        let mut out = [0.0; GCC_LAGS];
        for (j, r) in out.iter_mut().enumerate() {
            let lag = lag_of_index(j) as f64;
            let mut acc = 0.0;
            for k in 0..n / 2 + 1 {
                let mag = x1[k].norm() * x2[k].norm();
                if mag < DEGENERATE {
                    continue;
                }
                let g = (x1[k] * x2[k].conj()).scale(1.0 / mag);
                let a = 2.0 * core::f64::consts::PI * k as f64 * lag / n as f64;
                acc += (g * Complex::new(math::cos(a), math::sin(a))).re;
            }
            *r = acc;
        }
        out
    }

    #[test]
    fn inverse_transform_route_matches_direct_sum() {
        let n = 256;
        let plan = Fft::new(n);
        let frames = [noise(n, 1), noise(n, 2)];
        let s = real_spectra(&frames, &plan);
        let fast = gcc_phat_spectra(&s[0], &s[1], &plan);
        let slow = direct(&s[0], &s[1], n);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn packed_spectra_match_single_transforms() {
        let n = 64;
        let plan = Fft::new(n);
        let frames = [noise(n, 3), noise(n, 4), noise(n, 5)];
        let packed = real_spectra(&frames, &plan);
        for (f, p) in frames.iter().zip(&packed) {
            let mut buf: Vec<Complex> = f.iter().map(|&x| Complex::new(x, 0.0)).collect();
            plan.forward(&mut buf);
            for (a, b) in buf.iter().zip(p) {
                assert!((*a - *b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_channels_peak_at_zero_with_active_bin_count() {
        let n = 128;
        let plan = Fft::new(n);
        let x = noise(n, 9);
        let mut buf: Vec<Complex> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        plan.forward(&mut buf);
        let r = gcc_phat_spectra(&buf, &buf, &plan);
        let zero = (-MIN_LAG) as usize;
        let best = (0..GCC_LAGS).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        assert_eq!(best, zero);
        assert!((r[zero] - (n / 2 + 1) as f64).abs() < 1e-9);
    }

    #[test]
    fn lag_axis_covers_minus_29_to_30() {
        assert_eq!(lag_of_index(0), -29);
        assert_eq!(lag_of_index(GCC_LAGS - 1), 30);
    }

    #[test]
    fn pairs_of_four_channels() {
        assert_eq!(channel_pairs(4).len(), 6);
        assert_eq!(channel_pairs(2), [(0, 1)]);
    }

    #[test]
    fn mono_rejected() {
        let clip = AudioClip::silence(1, 4410, 44100);
        assert!(gcc_multires(&clip, &FeatureConfig::default()).is_err());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let cfg = FeatureConfig::default();
        assert_eq!(
            gcc_phat_pair(&[0.0; 3000], &[0.0; 2999], 44100, 120.0, &cfg).unwrap_err(),
            Error::MismatchedLengths(3000, 2999)
        );
    }
}
