use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    C3rnn,
    Crnn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Self::C3rnn => "c3rnn",
            Self::Crnn => "crnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "c3rnn" => Ok(Self::C3rnn),
            "crnn" => Ok(Self::Crnn),
            other => Err(Error::InvalidConfig(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Multi-label event detection or single-label source counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sed,
    Count,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sed => "sed",
            Self::Count => "count",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sed" => Ok(Self::Sed),
            "count" => Ok(Self::Count),
            other => Err(Error::InvalidConfig(format!("unknown task {other:?}"))),
        }
    }
}

/// Named hyperparameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    O1,
    O3,
    O6,
    Tut,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Self::O1, Self::O3, Self::O6, Self::Tut];

    pub fn name(self) -> &'static str {
        match self {
            Self::O1 => "o1",
            Self::O3 => "o3",
            Self::O6 => "o6",
            Self::Tut => "tut",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }

    /// `(P, Q, R)`: mbe filters, GRU units, gcc filters.
    pub fn sizes(self) -> (usize, usize, usize) {
        match self {
            Self::O1 => (8, 8, 16),
            Self::O3 => (16, 16, 32),
            Self::O6 => (32, 32, 64),
            Self::Tut => (64, 64, 64),
        }
    }

    pub fn seq_len(self) -> usize {
        match self {
            Self::Tut => 256,
            _ => 128,
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Self::Tut => 128,
            _ => 32,
        }
    }

    pub fn dropout(self) -> f64 {
        match self {
            Self::Tut => 0.2,
            _ => 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub task: Task,
    /// Filters per layer in the mbe branch.
    pub p: usize,
    /// GRU units per direction and width of the hidden dense layer.
    pub q: usize,
    /// Filters per layer in the gcc branch.
    pub r: usize,
    pub n_cnn_layers: usize,
    pub pool_mbe: Vec<usize>,
    pub pool_gcc: Vec<usize>,
    pub gru_layers: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub seq_len: usize,
    /// Output width: event classes, or possible source counts for counting.
    pub n_classes: usize,
    /// Audio channels `C`.
    pub channels: usize,
    pub use_mbe: bool,
    pub use_gcc: bool,
    /// Depth of the first-layer 3D kernels; `None` spans the full input depth.
    pub conv3d_depth: Option<usize>,
}

impl ModelConfig {
    pub fn preset(preset: Preset, arch: Arch, channels: usize, n_classes: usize, use_gcc: bool) -> Self {
        let (p, q, r) = preset.sizes();
        Self {
            arch,
            task: Task::Sed,
            p,
            q,
            r,
            n_cnn_layers: 3,
            pool_mbe: vec![5, 2, 2],
            pool_gcc: vec![5, 3, 2],
            gru_layers: 2,
            kernel: 3,
            dropout: preset.dropout(),
            seq_len: preset.seq_len(),
            n_classes,
            channels,
            use_mbe: true,
            use_gcc,
            conv3d_depth: None,
        }
    }

    /// Single-branch source counting with a softmax over `0..=max_polyphony`.
    pub fn counting(preset: Preset, channels: usize, max_polyphony: usize, kind: FeatureKind) -> Self {
        let mut cfg = Self::preset(preset, Arch::C3rnn, channels, max_polyphony + 1, kind == FeatureKind::Gcc);
        cfg.task = Task::Count;
        cfg.use_mbe = kind == FeatureKind::Mbe;
        cfg
    }

    /// Input depth of the gcc branch, `3 · C(C-1)/2`.
    pub fn gcc_depth(&self) -> usize {
        3 * self.channels * self.channels.saturating_sub(1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.use_mbe && !self.use_gcc {
            return bad("at least one feature branch is required".into());
        }
        if self.channels == 0 {
            return bad("channel count must be positive".into());
        }
        if self.use_gcc && self.channels < 2 {
            return bad("gcc needs at least two channels".into());
        }
        for (name, v) in [("p", self.p), ("q", self.q), ("r", self.r), ("seq_len", self.seq_len), ("n_classes", self.n_classes)] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.n_cnn_layers == 0 || self.gru_layers == 0 {
            return bad("need at least one convolutional and one recurrent layer".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.task == Task::Count && self.n_classes < 2 {
            return bad("counting needs at least two output levels".into());
        }
        for (kind, pools, on) in [
            (FeatureKind::Mbe, &self.pool_mbe, self.use_mbe),
            (FeatureKind::Gcc, &self.pool_gcc, self.use_gcc),
        ] {
            if !on {
                continue;
            }
            if pools.len() != self.n_cnn_layers {
                return bad(format!(
                    "{} pool schedule has {} stages for {} layers",
                    kind.name(),
                    pools.len(),
                    self.n_cnn_layers
                ));
            }
            let product: usize = pools.iter().product();
            if pools.contains(&0) || product * 2 != kind.bins() {
                return bad(format!(
                    "{} pool schedule {:?} must reduce {} bins to 2",
                    kind.name(),
                    pools,
                    kind.bins()
                ));
            }
        }
        if let Some(d) = self.conv3d_depth {
            let max = if self.use_mbe { self.channels } else { self.gcc_depth() };
            if d == 0 || d > max || (self.use_gcc && d > self.gcc_depth()) {
                return bad(format!("3D kernel depth {d} exceeds input depth"));
            }
        }
        Ok(())
    }

    /// Feature width entering the recurrent stack.
    pub fn rnn_input(&self) -> usize {
        2 * (if self.use_mbe { self.p } else { 0 } + if self.use_gcc { self.r } else { 0 })
    }
}
