//! Synthetic datasets on disk.
//!
//! Layout: `<out>/<split>/<id>_{foa|bin|mono}.wav`, `<out>/<split>/<id>.csv`
//! and `<out>/manifest.json`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use polysed_core::audio::max_polyphony;
use polysed_core::synth::{recording_rng, render_recording, sample_scene, EventBank, SynthConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::write_polysed_csv;
use crate::error::{read_text, write_file, Error, Result};
use crate::wav::write_wav;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Stream selector for per-recording generators.
    pub fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioFormat {
    Mono,
    Bin,
    Foa,
}

impl AudioFormat {
    pub const ALL: [AudioFormat; 3] = [AudioFormat::Mono, AudioFormat::Bin, AudioFormat::Foa];

    pub fn name(self) -> &'static str {
        match self {
            AudioFormat::Mono => "mono",
            AudioFormat::Bin => "bin",
            AudioFormat::Foa => "foa",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            AudioFormat::Mono => 1,
            AudioFormat::Bin => 2,
            AudioFormat::Foa => 4,
        }
    }
}

impl FromStr for AudioFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown audio format {s:?} (mono, bin or foa)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub id: String,
    pub split: Split,
    pub n_events: usize,
    /// Largest number of simultaneously sounding events.
    pub max_overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// `n_recordings` is the training-split size.
    pub synth: SynthConfig,
    pub n_test: usize,
    pub split_ratio: f64,
    pub classes: Vec<String>,
    pub recordings: Vec<RecordingEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.recordings.iter().filter(move |r| r.split == split).map(|r| r.id.as_str())
    }
}

pub fn recording_id(index: usize) -> String {
    format!("rec{index:04}")
}

pub fn wav_path(root: &Path, split: Split, id: &str, format: AudioFormat) -> PathBuf {
    root.join(split.name()).join(format!("{id}_{}.wav", format.name()))
}

pub fn csv_path(root: &Path, split: Split, id: &str) -> PathBuf {
    root.join(split.name()).join(format!("{id}.csv"))
}

/// Dataset-level settings on top of the per-recording [`SynthConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub synth: SynthConfig,
    pub n_test: usize,
    /// Fraction of each bank class used for the training split.
    pub split_ratio: f64,
}

fn synth_split(bank: &EventBank, cfg: &SynthConfig, split: Split, n: usize, out: &Path) -> Result<Vec<RecordingEntry>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = recording_rng(cfg.seed, split.stream(), i as u64);
            let scene = sample_scene(bank, cfg, &mut rng)?;
            let rendered = render_recording(&scene, bank)?;
            let id = recording_id(i);
            write_wav(&wav_path(out, split, &id, AudioFormat::Foa), &rendered.foa)?;
            write_wav(&wav_path(out, split, &id, AudioFormat::Bin), &rendered.binaural)?;
            write_wav(&wav_path(out, split, &id, AudioFormat::Mono), &rendered.mono)?;
            let events = scene.annotations();
            write_polysed_csv(&csv_path(out, split, &id), &events)?;
            Ok(RecordingEntry {
                id,
                split,
                n_events: events.len(),
                max_overlap: max_polyphony(&events),
            })
        })
        .collect()
}

/// Renders both splits from their banks and writes the manifest. Each
/// recording has its own generator, so output does not depend on scheduling.
pub fn synth_dataset(train_bank: &EventBank, test_bank: &EventBank, spec: &DatasetSpec, out: &Path) -> Result<DatasetManifest> {
    let cfg = &spec.synth;
    cfg.validate(train_bank)?;
    if spec.n_test > 0 {
        cfg.validate(test_bank)?;
    }
    let classes: Vec<String> = train_bank.keys().chain(test_bank.keys()).cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut recordings = synth_split(train_bank, cfg, Split::Train, cfg.n_recordings, out)?;
    recordings.extend(synth_split(test_bank, cfg, Split::Test, spec.n_test, out)?);
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        synth: cfg.clone(),
        n_test: spec.n_test,
        split_ratio: spec.split_ratio,
        classes,
        recordings,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(&dir.join(MANIFEST_FILE), format!("unsupported version {}", m.format_version)));
    }
    Ok(m)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    write_file(path, s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}
