//! Binary feature container and the feature-set directory.
//!
//! File layout, little-endian:
//! `b"PSDFEAT\0"`, version u32, kind u32 (0 mbe, 1 gcc), frames u32, bins u32,
//! depth u32, hop f64, then `depth` labels as (u32 byte length, UTF-8), then
//! `frames · bins · depth` f32 values in time-bin-depth order.

use std::path::{Path, PathBuf};

use polysed_core::features::FeatureConfig;
use polysed_core::{FeatureKind, FeatureTensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, AudioFormat, Split};
use crate::error::{read_file, write_file, Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"PSDFEAT\0";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURES_FILE: &str = "features.json";

fn kind_code(kind: FeatureKind) -> u32 {
    match kind {
        FeatureKind::Mbe => 0,
        FeatureKind::Gcc => 1,
    }
}

pub fn encode_features(f: &FeatureTensor) -> Vec<u8> {
    let (t, b, d) = f.shape();
    let mut out = Vec::with_capacity(40 + t * b * d * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, kind_code(f.kind), t as u32, b as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&f.hop.to_le_bytes());
    for l in &f.labels {
        out.extend_from_slice(&(l.len() as u32).to_le_bytes());
        out.extend_from_slice(l.as_bytes());
    }
    for &v in f.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated feature file")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<FeatureTensor, String> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8).ok() != Some(&FEATURE_MAGIC[..]) {
        return Err("bad magic".into());
    }
    let version = c.u32()?;
    if version != FEATURE_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let kind = match c.u32()? {
        0 => FeatureKind::Mbe,
        1 => FeatureKind::Gcc,
        k => return Err(format!("unknown feature kind {k}")),
    };
    let (t, b, d) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let hop = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
    let mut labels = Vec::with_capacity(d.min(1024));
    for _ in 0..d {
        let n = c.u32()? as usize;
        labels.push(String::from_utf8(c.take(n)?.to_vec()).map_err(|_| "label is not UTF-8")?);
    }
    let n = t.checked_mul(b).and_then(|x| x.checked_mul(d)).ok_or("dimensions overflow")?;
    let payload = c.take(n.checked_mul(4).ok_or("dimensions overflow")?)?;
    if c.at != bytes.len() {
        return Err("trailing bytes".into());
    }
    let data = payload
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes(w.try_into().unwrap()) as f64)
        .collect();
    FeatureTensor::new(kind, hop, labels, t, b, data).map_err(|e| e.to_string())
}

pub fn write_features(path: &Path, f: &FeatureTensor) -> Result<()> {
    write_file(path, encode_features(f))
}

pub fn read_features(path: &Path) -> Result<FeatureTensor> {
    decode_features(&read_file(path)?).map_err(|r| Error::format(path, r))
}

pub fn feature_path(root: &Path, split: Split, id: &str, kind: FeatureKind) -> PathBuf {
    root.join(split.name()).join(format!("{id}.{}.feat", kind.name()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub id: String,
    pub split: Split,
    pub n_frames: usize,
}

/// Contents of `features.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub format_version: u32,
    pub audio_format: AudioFormat,
    pub channels: usize,
    pub kinds: Vec<FeatureKind>,
    pub config: FeatureConfig,
    pub sample_rate: u32,
    /// Seconds per frame.
    pub hop: f64,
    pub classes: Vec<String>,
    pub max_polyphony: usize,
    pub recordings: Vec<FeatureEntry>,
}

impl FeatureSet {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &FeatureEntry> {
        self.recordings.iter().filter(move |r| r.split == split)
    }
}

pub fn load_feature_set(dir: &Path) -> Result<FeatureSet> {
    let path = dir.join(FEATURES_FILE);
    let set: FeatureSet = read_json(&path)?;
    if set.format_version != FEATURE_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", set.format_version)));
    }
    Ok(set)
}
