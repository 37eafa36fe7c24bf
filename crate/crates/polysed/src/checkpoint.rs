//! Model checkpoints.
//!
//! Layout, little-endian: `b"PSDCKPT\0"`, version u32, metadata length u64,
//! metadata JSON, tensor count u32, then per tensor (u32 name length, name,
//! u32 rank, u32 dims, f32 values), then optimizer moment count u32 and per
//! parameter (u64 length, f64 first moments, f64 second moments).

use std::path::Path;

use polysed_core::features::{FeatureConfig, FeatureStats};
use polysed_core::model::{Model, ModelConfig};
use polysed_core::nn::{AdamState, Tensor};
use polysed_core::train::TrainConfig;
use polysed_core::FeatureKind;
use serde::{Deserialize, Serialize};

use crate::dataset::AudioFormat;
use crate::error::{read_file, write_file, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSDCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Normalization statistics per feature kind, from the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mbe: Option<FeatureStats>,
    pub gcc: Option<FeatureStats>,
}

impl NormStats {
    pub fn get(&self, kind: FeatureKind) -> Option<&FeatureStats> {
        match kind {
            FeatureKind::Mbe => self.mbe.as_ref(),
            FeatureKind::Gcc => self.gcc.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dtype: String,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub classes: Vec<String>,
    pub audio_format: AudioFormat,
    pub kinds: Vec<FeatureKind>,
    pub features: FeatureConfig,
    pub stats: NormStats,
    pub best_epoch: usize,
    pub best_er: f64,
    pub best_f: f64,
    pub optimizer: OptimizerMeta,
    /// Word position of the training stream, in decimal.
    pub rng_word_pos: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    /// Captures parameters and batch-norm statistics under their model names.
    pub fn capture(model: &mut Model<f32>, meta: CheckpointMeta, optimizer: &AdamState) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            model.params_mut().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        tensors.extend(model.buffers_mut().into_iter().map(|(n, b)| (n, b.clone())));
        let moments = optimizer.m.iter().cloned().zip(optimizer.v.iter().cloned()).collect();
        Self { meta, tensors, moments }
    }

    /// Rebuilds the model and loads every named tensor into it.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::build(&self.meta.model, self.meta.model_seed)?;
        let mut named: std::collections::HashMap<&str, &Tensor<f32>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut assign = |name: &str, target: &mut Tensor<f32>| -> Result<()> {
            let t = named
                .remove(name)
                .ok_or_else(|| Error::Usage(format!("checkpoint lacks tensor {name}")))?;
            if t.shape() != target.shape() {
                return Err(Error::Usage(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    target.shape()
                )));
            }
            *target = t.clone();
            Ok(())
        };
        for (name, p) in model.params_mut() {
            assign(&name, &mut p.value)?;
        }
        for (name, b) in model.buffers_mut() {
            assign(&name, b)?;
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Usage(format!("checkpoint tensor {extra} has no place in the model")));
        }
        Ok(model)
    }

    pub fn optimizer(&self) -> AdamState {
        let o = &self.meta.optimizer;
        AdamState {
            step: o.step,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            m: self.moments.iter().map(|(m, _)| m.clone()).collect(),
            v: self.moments.iter().map(|(_, v)| v.clone()).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("checkpoint metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.moments.len() as u32).to_le_bytes());
        for (m, v) in &self.moments {
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err("bad checkpoint magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("checkpoint metadata: {e}"))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
            let data = r
                .take(count.checked_mul(4).ok_or("tensor too large")?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?));
        }
        let n = r.u32()? as usize;
        let mut moments = Vec::new();
        for _ in 0..n {
            let len = r.u64()? as usize;
            let mut read = || -> std::result::Result<Vec<f64>, String> {
                Ok(r.take(len.checked_mul(8).ok_or("moment too large")?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let m = read()?;
            let v = read()?;
            moments.push((m, v));
        }
        if r.at != bytes.len() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(Self { meta, tensors, moments })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, ckpt.encode())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&read_file(path)?).map_err(|r| Error::format(path, r))
}
