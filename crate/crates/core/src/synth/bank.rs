use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::math;

/// Isolated event examples per class label, ordered by label.
pub type EventBank = BTreeMap<String, Vec<AudioClip>>;

/// Splits every class into disjoint train/test sets; the train share is
/// `floor(n·ratio)`. Shuffling is seeded per class, so the split depends only
/// on `seed` and the class contents.
pub fn split_bank(bank: &EventBank, ratio: f64, seed: u64) -> Result<(EventBank, EventBank)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig("split ratio must lie in [0, 1]".into()));
    }
    let mut train = EventBank::new();
    let mut test = EventBank::new();
    for (ci, (label, clips)) in bank.iter().enumerate() {
        if clips.len() < 2 {
            return Err(Error::TooFewExamples {
                label: label.clone(),
                count: clips.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        let mut idx: Vec<usize> = (0..clips.len()).collect();
        idx.shuffle(&mut rng);
        let n_train = math::floor(clips.len() as f64 * ratio) as usize;
        train.insert(label.clone(), idx[..n_train].iter().map(|&i| clips[i].clone()).collect());
        test.insert(label.clone(), idx[n_train..].iter().map(|&i| clips[i].clone()).collect());
    }
    Ok((train, test))
}

/// Class names of the procedural bank, in generation order.
pub const PROCEDURAL_CLASSES: [&str; 11] = [
    "tone_low",
    "tone_high",
    "chirp_up",
    "chirp_down",
    "noise_burst",
    "click_train",
    "am_tone",
    "harmonic",
    "band_noise_low",
    "band_noise_high",
    "fm_tone",
];

/// A deterministic bank of synthetic isolated events with class-specific
/// spectra, standing in for a recorded event library.
pub fn procedural_bank(
    n_classes: usize,
    examples_per_class: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<EventBank> {
    if n_classes == 0 || n_classes > PROCEDURAL_CLASSES.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "procedural bank supports 1..={} classes",
            PROCEDURAL_CLASSES.len()
        )));
    }
    let mut bank = EventBank::new();
    for (ci, name) in PROCEDURAL_CLASSES[..n_classes].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        let clips = (0..examples_per_class)
            .map(|_| {
                let dur = rng.gen_range(0.4..1.2);
                let n = math::round(dur * sample_rate as f64) as usize;
                let jitter = rng.gen_range(0.9..1.1);
                let x = synth_class(ci, n, sample_rate as f64, jitter, &mut rng);
                AudioClip::new(vec![x], sample_rate)
            })
            .collect::<Result<Vec<_>>>()?;
        bank.insert(name.to_string(), clips);
    }
    Ok(bank)
}

fn one_pole(x: &mut [f64], cutoff: f64, rate: f64) {
    let a = 1.0 - math::exp(-2.0 * core::f64::consts::PI * cutoff / rate);
    let mut y = 0.0;
    for v in x.iter_mut() {
        y += a * (*v - y);
        *v = y;
    }
}

fn synth_class(class: usize, n: usize, rate: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use core::f64::consts::PI;
    let tau = 2.0 * PI;
    let mut phase = 0.0;
    let mut x: Vec<f64> = match class {
        0 => (0..n).map(|i| math::sin(tau * 220.0 * jitter * i as f64 / rate)).collect(),
        1 => (0..n).map(|i| math::sin(tau * 3000.0 * jitter * i as f64 / rate)).collect(),
        2 | 3 => {
            let (f0, f1) = if class == 2 { (300.0, 4000.0) } else { (4000.0, 300.0) };
            (0..n)
                .map(|i| {
                    let f = jitter * (f0 + (f1 - f0) * i as f64 / n as f64);
                    phase += tau * f / rate;
                    math::sin(phase)
                })
                .collect()
        }
        4 => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        5 => {
            let period = (rate / (12.0 * jitter)) as usize;
            (0..n)
                .map(|i| if i % period < 40 { rng.gen_range(-1.0..1.0) } else { 0.0 })
                .collect()
        }
        6 => (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                math::sin(tau * 1000.0 * jitter * t) * (0.5 + 0.5 * math::sin(tau * 8.0 * t))
            })
            .collect(),
        7 => (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                (1..=5)
                    .map(|h| math::sin(tau * 150.0 * jitter * h as f64 * t) / h as f64)
                    .sum::<f64>()
                    * 0.6
            })
            .collect(),
        8 => {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            one_pole(&mut v, 400.0 * jitter, rate);
            one_pole(&mut v, 400.0 * jitter, rate);
            v.iter_mut().for_each(|s| *s *= 6.0);
            v
        }
        9 => {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut lp = v.clone();
            one_pole(&mut lp, 6000.0 * jitter, rate);
            v.iter_mut().zip(&lp).for_each(|(s, l)| *s -= l);
            v
        }
        _ => (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                math::sin(tau * 1800.0 * jitter * t + 6.0 * math::sin(tau * 5.0 * t))
            })
            .collect(),
    };
    // 10 ms attack, exponential-ish release over the last 30%.
    let attack = (0.01 * rate) as usize;
    let release_start = (n as f64 * 0.7) as usize;
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for (i, v) in x.iter_mut().enumerate() {
        let mut env = 1.0;
        if i < attack {
            env = i as f64 / attack as f64;
        }
        if i >= release_start {
            let r = (i - release_start) as f64 / (n - release_start).max(1) as f64;
            env *= (1.0 - r) * (1.0 - r);
        }
        *v = 0.5 * env * *v / peak;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_with(counts: &[usize]) -> EventBank {
        counts
            .iter()
            .enumerate()
            .map(|(c, &n)| {
                let clips = (0..n)
                    .map(|i| AudioClip::new(vec![vec![i as f64 / 100.0; 10]], 100).unwrap())
                    .collect();
                (alloc::format!("c{c}"), clips)
            })
            .collect()
    }

    #[test]
    fn twenty_examples_split_sixteen_four() {
        let (train, test) = split_bank(&bank_with(&[20, 20]), 0.8, 7).unwrap();
        for c in ["c0", "c1"] {
            assert_eq!(train[c].len(), 16);
            assert_eq!(test[c].len(), 4);
            for t in &test[c] {
                assert!(!train[c].contains(t), "train/test overlap");
            }
        }
    }

    #[test]
    fn floor_rule() {
        let (train, test) = split_bank(&bank_with(&[5]), 0.8, 1).unwrap();
        assert_eq!((train["c0"].len(), test["c0"].len()), (4, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let bank = bank_with(&[10, 7]);
        assert_eq!(split_bank(&bank, 0.5, 3).unwrap(), split_bank(&bank, 0.5, 3).unwrap());
    }

    #[test]
    fn lonely_class_rejected() {
        assert!(matches!(
            split_bank(&bank_with(&[4, 1]), 0.5, 0),
            Err(Error::TooFewExamples { count: 1, .. })
        ));
    }

    #[test]
    fn procedural_bank_is_bounded_and_deterministic() {
        let a = procedural_bank(11, 2, 8000, 5).unwrap();
        assert_eq!(a, procedural_bank(11, 2, 8000, 5).unwrap());
        assert_eq!(a.len(), 11);
        for clips in a.values() {
            for c in clips {
                assert!(c.peak() <= 0.5 + 1e-12 && c.peak() > 0.0);
                assert!(c.duration() >= 0.4 && c.duration() <= 1.2);
            }
        }
    }
}
