use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EventBank;
use crate::audio::EventInstance;
use crate::error::{Error, Result};
use crate::math;

/// Attempts per event placement before the scene is considered full.
pub const PLACEMENT_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Seconds.
    pub duration: f64,
    pub sample_rate: u32,
    pub max_polyphony: usize,
    pub n_recordings: usize,
    /// Linear gain bounds, sampled log-uniformly.
    pub gain_range: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration: 30.0,
            sample_rate: 44100,
            max_polyphony: 3,
            n_recordings: 500,
            gain_range: [0.25, 1.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_samples(&self) -> usize {
        math::round(self.duration * self.sample_rate as f64) as usize
    }

    pub fn validate(&self, bank: &EventBank) -> Result<()> {
        let [lo, hi] = self.gain_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig(format!("gain range [{lo}, {hi}]")));
        }
        if self.max_polyphony == 0 {
            return Err(Error::InvalidConfig("max polyphony must be at least 1".into()));
        }
        if self.sample_rate == 0 || !(self.duration > 0.0) {
            return Err(Error::InvalidConfig("duration and sample rate must be positive".into()));
        }
        if bank.values().all(Vec::is_empty) {
            return Err(Error::InvalidConfig("event bank is empty".into()));
        }
        for (label, clips) in bank {
            for c in clips {
                if c.sample_rate() != self.sample_rate {
                    return Err(Error::InvalidConfig(format!(
                        "{label} example at {} Hz, expected {}",
                        c.sample_rate(),
                        self.sample_rate
                    )));
                }
                if c.n_frames() >= self.n_samples() {
                    return Err(Error::InvalidConfig(format!(
                        "{label} example longer than the {} s recording",
                        self.duration
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An event placed in a scene together with the bank example that sounds it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub instance: EventInstance,
    /// Index into `bank[instance.label]`.
    pub example: usize,
    pub onset_sample: usize,
    pub n_samples: usize,
}

impl SceneEvent {
    fn end_sample(&self) -> usize {
        self.onset_sample + self.n_samples
    }

    fn overlaps(&self, start: usize, end: usize) -> bool {
        self.onset_sample.max(start) < self.end_sample().min(end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration: f64,
    pub sample_rate: u32,
    pub max_polyphony: usize,
    /// Sorted by onset.
    pub events: Vec<SceneEvent>,
}

impl SceneSpec {
    pub fn annotations(&self) -> Vec<EventInstance> {
        self.events.iter().map(|e| e.instance.clone()).collect()
    }
}

/// Azimuths every 10° in [-180, 180), elevations every 10° in [-60, 60].
pub fn direction_grid() -> Vec<(f64, f64)> {
    (-6..=6)
        .flat_map(|e| (-18..18).map(move |a| (a as f64 * 10.0, e as f64 * 10.0)))
        .collect()
}

/// Generator for recording `index` of a split; independent of how many
/// recordings are synthesized or in which order.
pub fn recording_rng(seed: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index);
    rng
}

/// Peak number of `events` active inside `[start, end)`.
fn peak_overlap(events: &[&SceneEvent], start: usize, end: usize) -> usize {
    let mut edges: Vec<(usize, i32)> = events
        .iter()
        .flat_map(|e| [(e.onset_sample.max(start), 1), (e.end_sample().min(end), -1)])
        .collect();
    edges.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cur = 0i32;
    let mut best = 0i32;
    for (_, d) in edges {
        cur += d;
        best = best.max(cur);
    }
    best as usize
}

/// Draws a scene: events are picked uniformly (class, then example), onsets
/// uniformly over the recording subject to the polyphony cap, directions
/// uniformly from the grid excluding those of temporally overlapping events,
/// and gains log-uniformly. Placement stops at the first event that cannot be
/// placed within [`PLACEMENT_RETRIES`] attempts.
pub fn sample_scene<R: Rng>(bank: &EventBank, cfg: &SynthConfig, rng: &mut R) -> Result<SceneSpec> {
    cfg.validate(bank)?;
    let classes: Vec<(&String, usize)> = bank
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k, v.len()))
        .collect();
    let total = cfg.n_samples();
    let n_clips: usize = classes.iter().map(|c| c.1).sum();
    let mean_len = bank.values().flatten().map(|c| c.n_frames()).sum::<usize>() as f64 / n_clips as f64;
    let target = math::ceil(cfg.max_polyphony as f64 * total as f64 / mean_len) as usize;
    let grid = direction_grid();
    let (log_lo, log_hi) = (math::ln(cfg.gain_range[0]), math::ln(cfg.gain_range[1]));
    let rate = cfg.sample_rate as f64;

    let mut events: Vec<SceneEvent> = Vec::new();
    'events: for _ in 0..target {
        let (label, count) = classes[rng.gen_range(0..classes.len())];
        let example = rng.gen_range(0..count);
        let len = bank[label][example].n_frames();
        for _ in 0..PLACEMENT_RETRIES {
            let onset = rng.gen_range(0..=total - len);
            let end = onset + len;
            let overlapping: Vec<&SceneEvent> = events.iter().filter(|e| e.overlaps(onset, end)).collect();
            if peak_overlap(&overlapping, onset, end) + 1 > cfg.max_polyphony {
                continue;
            }
            let free: Vec<&(f64, f64)> = grid
                .iter()
                .filter(|&&(az, el)| {
                    !overlapping
                        .iter()
                        .any(|e| e.instance.azimuth == az && e.instance.elevation == el)
                })
                .collect();
            if free.is_empty() {
                continue;
            }
            let &(azimuth, elevation) = free[rng.gen_range(0..free.len())];
            let gain = if log_hi > log_lo {
                math::exp(rng.gen_range(log_lo..log_hi))
            } else {
                cfg.gain_range[0]
            };
            events.push(SceneEvent {
                instance: EventInstance {
                    label: label.clone(),
                    onset: onset as f64 / rate,
                    offset: end as f64 / rate,
                    azimuth,
                    elevation,
                    gain,
                },
                example,
                onset_sample: onset,
                n_samples: len,
            });
            continue 'events;
        }
        break;
    }
    if events.is_empty() {
        return Err(Error::SceneInfeasible(format!(
            "no event fits a {} s recording after {PLACEMENT_RETRIES} attempts",
            cfg.duration
        )));
    }
    events.sort_by(|a, b| a.onset_sample.cmp(&b.onset_sample).then(a.instance.label.cmp(&b.instance.label)));
    Ok(SceneSpec {
        duration: cfg.duration,
        sample_rate: cfg.sample_rate,
        max_polyphony: cfg.max_polyphony,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::max_polyphony;
    use crate::synth::procedural_bank;

    fn cfg(o: usize) -> SynthConfig {
        SynthConfig {
            duration: 6.0,
            sample_rate: 8000,
            max_polyphony: o,
            n_recordings: 1,
            gain_range: [0.25, 1.0],
            seed: 1,
        }
    }

    fn distinct_directions_hold(scene: &SceneSpec) -> bool {
        scene.events.iter().enumerate().all(|(i, a)| {
            scene.events[i + 1..].iter().all(|b| {
                !a.overlaps(b.onset_sample, b.end_sample())
                    || (a.instance.azimuth, a.instance.elevation) != (b.instance.azimuth, b.instance.elevation)
            })
        })
    }

    #[test]
    fn polyphony_caps_hold() {
        let bank = procedural_bank(6, 4, 8000, 2).unwrap();
        for o in [1, 3, 6] {
            for i in 0..10 {
                let scene = sample_scene(&bank, &cfg(o), &mut recording_rng(4, 0, i)).unwrap();
                let ann = scene.annotations();
                assert!(max_polyphony(&ann) <= o);
                assert!(distinct_directions_hold(&scene));
                for e in &ann {
                    e.validate().unwrap();
                    assert!(e.gain >= 0.25 && e.gain <= 1.0);
                    assert_eq!(e.azimuth % 10.0, 0.0);
                    assert!(e.elevation.abs() <= 60.0);
                }
            }
        }
    }

    #[test]
    fn o1_events_never_overlap() {
        let bank = procedural_bank(4, 3, 8000, 2).unwrap();
        let scene = sample_scene(&bank, &cfg(1), &mut recording_rng(9, 0, 0)).unwrap();
        for w in scene.events.windows(2) {
            assert!(w[0].end_sample() <= w[1].onset_sample);
        }
    }

    #[test]
    fn seeded_scenes_repeat() {
        let bank = procedural_bank(3, 3, 8000, 2).unwrap();
        let a = sample_scene(&bank, &cfg(3), &mut recording_rng(5, 0, 2)).unwrap();
        let b = sample_scene(&bank, &cfg(3), &mut recording_rng(5, 0, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_size() {
        assert_eq!(direction_grid().len(), 36 * 13);
    }

    #[test]
    fn bad_gain_range_rejected() {
        let bank = procedural_bank(1, 2, 8000, 2).unwrap();
        let mut c = cfg(1);
        c.gain_range = [0.0, 1.0];
        assert!(sample_scene(&bank, &c, &mut recording_rng(0, 0, 0)).is_err());
    }
}
