use alloc::vec;
use alloc::vec::Vec;

use super::{EventBank, SceneSpec};
use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::math;

/// Peak level after normalization of a clipping mixture.
pub const PEAK_TARGET: f64 = 0.95;
/// Spherical head radius in meters.
pub const HEAD_RADIUS: f64 = 0.0875;
/// Meters per second.
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Contralateral one-pole low-pass cutoff at full lateral incidence.
pub const SHADOW_CUTOFF_HZ: f64 = 1200.0;

fn source_signal(bank: &EventBank, label: &str, example: usize) -> Result<Vec<f64>> {
    let clip = bank
        .get(label)
        .and_then(|v| v.get(example))
        .ok_or_else(|| crate::Error::UnknownLabel(label.into()))?;
    Ok(if clip.n_channels() == 1 {
        clip.channel(0).to_vec()
    } else {
        clip.mixdown().channel(0).to_vec()
    })
}

fn n_samples(scene: &SceneSpec) -> usize {
    math::round(scene.duration * scene.sample_rate as f64) as usize
}

/// FOA mixture before normalization, channels W, X, Y, Z with SN3D gains
/// (W = 1, X = cosφ·cosθ, Y = sinφ·cosθ, Z = sinθ).
pub fn encode_foa_raw(scene: &SceneSpec, bank: &EventBank) -> Result<AudioClip> {
    let n = n_samples(scene);
    let mut ch = vec![vec![0.0; n]; 4];
    for ev in &scene.events {
        let s = source_signal(bank, &ev.instance.label, ev.example)?;
        let (sin_az, cos_az) = math::sin_cos_deg(ev.instance.azimuth);
        let (sin_el, cos_el) = math::sin_cos_deg(ev.instance.elevation);
        let gains = [1.0, cos_az * cos_el, sin_az * cos_el, sin_el];
        let g = ev.instance.gain;
        for (i, &x) in s.iter().enumerate() {
            let t = ev.onset_sample + i;
            if t >= n {
                break;
            }
            let v = g * x;
            for (c, k) in ch.iter_mut().zip(gains) {
                c[t] += v * k;
            }
        }
    }
    AudioClip::new(ch, scene.sample_rate)
}

fn peak_normalize(clips: &mut [&mut AudioClip]) {
    let peak = clips.iter().map(|c| c.peak()).fold(0.0, f64::max);
    if peak > 1.0 {
        let g = PEAK_TARGET / peak;
        for c in clips.iter_mut() {
            c.scale(g);
        }
    }
}

/// FOA rendering, peak-normalized to [`PEAK_TARGET`] if it would clip.
pub fn encode_foa(scene: &SceneSpec, bank: &EventBank) -> Result<AudioClip> {
    let mut foa = encode_foa_raw(scene, bank)?;
    peak_normalize(&mut [&mut foa]);
    Ok(foa)
}

/// Woodworth interaural time difference in seconds for a lateral angle in radians.
pub fn woodworth_itd(lateral: f64) -> f64 {
    HEAD_RADIUS / SPEED_OF_SOUND * (lateral + math::sin(lateral))
}

fn add_delayed(out: &mut [f64], src: &[f64], onset: usize, delay: f64) {
    let whole = math::floor(delay) as usize;
    let frac = delay - whole as f64;
    for i in 0..src.len() + 1 {
        let t = onset + whole + i;
        if t >= out.len() {
            break;
        }
        let cur = if i < src.len() { src[i] } else { 0.0 };
        if frac == 0.0 {
            out[t] += cur;
        } else {
            let prev = if i > 0 { src[i - 1] } else { 0.0 };
            out[t] += (1.0 - frac) * cur + frac * prev;
        }
    }
}

/// Two-ear mixture from a spherical-head model: the far ear is delayed by
/// the Woodworth ITD of the lateral angle and partially low-passed in
/// proportion to `|sin(lateral)|`. Positive azimuth puts the source on the
/// right. Channels are left, right.
pub fn binauralize_raw(scene: &SceneSpec, bank: &EventBank) -> Result<AudioClip> {
    let n = n_samples(scene);
    let rate = scene.sample_rate as f64;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let a = 1.0 - math::exp(-2.0 * core::f64::consts::PI * SHADOW_CUTOFF_HZ / rate);
    for ev in &scene.events {
        let s: Vec<f64> = source_signal(bank, &ev.instance.label, ev.example)?
            .into_iter()
            .map(|x| ev.instance.gain * x)
            .collect();
        let (sin_az, _) = math::sin_cos_deg(ev.instance.azimuth);
        let (_, cos_el) = math::sin_cos_deg(ev.instance.elevation);
        let lateral = math::asin((sin_az * cos_el).abs().min(1.0));
        let shadow = math::sin(lateral);
        let delay = woodworth_itd(lateral) * rate;
        let far: Vec<f64> = if shadow == 0.0 {
            s.clone()
        } else {
            let mut y = 0.0;
            s.iter()
                .map(|&x| {
                    y += a * (x - y);
                    (1.0 - shadow) * x + shadow * y
                })
                .collect()
        };
        let (near_ear, far_ear) = if sin_az > 0.0 {
            (&mut right, &mut left)
        } else {
            (&mut left, &mut right)
        };
        add_delayed(near_ear, &s, ev.onset_sample, 0.0);
        add_delayed(far_ear, &far, ev.onset_sample, delay);
    }
    AudioClip::new(vec![left, right], scene.sample_rate)
}

/// Binaural rendering, peak-normalized to [`PEAK_TARGET`] if it would clip.
pub fn binauralize(scene: &SceneSpec, bank: &EventBank) -> Result<AudioClip> {
    let mut bin = binauralize_raw(scene, bank)?;
    peak_normalize(&mut [&mut bin]);
    Ok(bin)
}

/// The omnidirectional W channel of an FOA clip.
pub fn mono(foa: &AudioClip) -> Result<AudioClip> {
    if foa.n_channels() != 4 {
        return Err(Error::ChannelCount {
            expected: "4 (W, X, Y, Z)",
            got: foa.n_channels(),
        });
    }
    AudioClip::new(vec![foa.channel(0).to_vec()], foa.sample_rate())
}

/// All three formats of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedRecording {
    pub foa: AudioClip,
    pub binaural: AudioClip,
    pub mono: AudioClip,
}

/// Renders every format and applies one shared normalization gain, so the
/// level relationship between formats is preserved.
pub fn render_recording(scene: &SceneSpec, bank: &EventBank) -> Result<RenderedRecording> {
    let mut foa = encode_foa_raw(scene, bank)?;
    let mut binaural = binauralize_raw(scene, bank)?;
    peak_normalize(&mut [&mut foa, &mut binaural]);
    let mono = mono(&foa)?;
    Ok(RenderedRecording { foa, binaural, mono })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::EventInstance;
    use crate::synth::SceneEvent;
    use alloc::string::ToString;

    const RATE: u32 = 44100;

    fn noise_bank(n: usize) -> EventBank {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let mut bank = EventBank::new();
        bank.insert("n".to_string(), vec![AudioClip::new(vec![x], RATE).unwrap()]);
        bank
    }

    fn scene(dirs: &[(f64, f64, f64)], len: usize) -> SceneSpec {
        SceneSpec {
            duration: 0.25,
            sample_rate: RATE,
            max_polyphony: 6,
            events: dirs
                .iter()
                .map(|&(az, el, g)| SceneEvent {
                    instance: EventInstance {
                        azimuth: az,
                        elevation: el,
                        gain: g,
                        ..EventInstance::new("n", 0.01, 0.01 + len as f64 / RATE as f64)
                    },
                    example: 0,
                    onset_sample: 441,
                    n_samples: len,
                })
                .collect(),
        }
    }

    #[test]
    fn front_source_x_equals_w() {
        let bank = noise_bank(4000);
        let foa = encode_foa(&scene(&[(0.0, 0.0, 1.0)], 4000), &bank).unwrap();
        assert_eq!(foa.channel(1), foa.channel(0));
        assert!(foa.channel(2).iter().chain(foa.channel(3)).all(|&v| v == 0.0));
    }

    #[test]
    fn zenith_source_z_equals_w() {
        let bank = noise_bank(4000);
        let foa = encode_foa(&scene(&[(30.0, 90.0, 1.0)], 4000), &bank).unwrap();
        assert_eq!(foa.channel(3), foa.channel(0));
        assert!(foa.channel(1).iter().chain(foa.channel(2)).all(|&v| v == 0.0));
    }

    #[test]
    fn opposite_lateral_sources_cancel_in_y() {
        let bank = noise_bank(4000);
        let foa = encode_foa_raw(&scene(&[(90.0, 0.0, 1.0), (-90.0, 0.0, 1.0)], 4000), &bank).unwrap();
        let s = bank["n"][0].channel(0);
        assert!(foa.channel(2).iter().all(|&v| v == 0.0));
        for (i, &x) in s.iter().enumerate() {
            // Oracle: per-sample direct summation of the two contributions.
            assert_eq!(foa.channel(0)[441 + i], 1.0 * x + 1.0 * x);
        }
    }

    #[test]
    fn doubling_gains_doubles_foa() {
        let bank = noise_bank(3000);
        let a = encode_foa_raw(&scene(&[(40.0, 20.0, 0.3), (-120.0, -10.0, 0.7)], 3000), &bank).unwrap();
        let b = encode_foa_raw(&scene(&[(40.0, 20.0, 0.6), (-120.0, -10.0, 1.4)], 3000), &bank).unwrap();
        for c in 0..4 {
            for (x, y) in a.channel(c).iter().zip(b.channel(c)) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn clipping_mixture_is_normalized() {
        let bank = noise_bank(3000);
        let loud = scene(&[(0.0, 0.0, 1.0); 1].repeat(4), 3000);
        let foa = encode_foa(&loud, &bank).unwrap();
        assert!((foa.peak() - PEAK_TARGET).abs() < 1e-12);
    }

    #[test]
    fn median_plane_source_is_diotic() {
        let bank = noise_bank(4000);
        let bin = binauralize(&scene(&[(0.0, 30.0, 1.0)], 4000), &bank).unwrap();
        assert_eq!(bin.channel(0), bin.channel(1));
    }

    #[test]
    fn lateral_source_itd_is_29_samples() {
        let bank = noise_bank(6000);
        let bin = binauralize(&scene(&[(90.0, 0.0, 1.0)], 6000), &bank).unwrap();
        let (l, r) = (bin.channel(0), bin.channel(1));
        // Oracle: brute-force cross-correlation, left lagging right.
        let best = (0..60)
            .max_by(|&a, &b| {
                let xc = |d: usize| (0..l.len() - d).map(|i| r[i] * l[i + d]).sum::<f64>();
                xc(a).total_cmp(&xc(b))
            })
            .unwrap();
        let expect = math::round(0.00066 * RATE as f64) as usize;
        assert_eq!(expect, 29);
        assert_eq!(best, expect);
        let itd = woodworth_itd(core::f64::consts::FRAC_PI_2);
        assert!((itd - 0.0875 / 343.0 * (core::f64::consts::FRAC_PI_2 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mirrored_scene_swaps_ears() {
        let bank = noise_bank(3000);
        let dirs = [(50.0, 10.0, 0.5), (-130.0, -20.0, 0.9), (170.0, 0.0, 0.4)];
        let mirrored: Vec<_> = dirs.iter().map(|&(a, e, g)| (if a == -180.0 { a } else { -a }, e, g)).collect();
        let a = binauralize(&scene(&dirs, 3000), &bank).unwrap();
        let b = binauralize(&scene(&mirrored, 3000), &bank).unwrap();
        assert_eq!(a.channel(0), b.channel(1));
        assert_eq!(a.channel(1), b.channel(0));
    }

    #[test]
    fn mono_is_w() {
        let bank = noise_bank(2000);
        let foa = encode_foa(&scene(&[(0.0, 0.0, 1.0)], 2000), &bank).unwrap();
        let m = mono(&foa).unwrap();
        assert_eq!(m.channel(0), foa.channel(0));
        assert_eq!(&m.channel(0)[441..2441], bank["n"][0].channel(0));
        assert!(mono(&AudioClip::silence(2, 10, RATE)).is_err());
        let silent = mono(&AudioClip::silence(4, 10, RATE)).unwrap();
        assert!(silent.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_normalization_preserves_format_levels() {
        let bank = noise_bank(3000);
        let loud = scene(&[(0.0, 0.0, 1.0); 1].repeat(4), 3000);
        let raw = encode_foa_raw(&loud, &bank).unwrap();
        let rec = render_recording(&loud, &bank).unwrap();
        let g = rec.foa.channel(0)[500] / raw.channel(0)[500];
        let raw_bin = binauralize_raw(&loud, &bank).unwrap();
        assert!((rec.binaural.channel(0)[500] / raw_bin.channel(0)[500] - g).abs() < 1e-12);
    }
}
