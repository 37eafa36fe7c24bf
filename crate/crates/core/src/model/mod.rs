//! The C3RNN and CRNN networks: per-feature convolutional branches,
//! concatenation along the feature axis, stacked bidirectional GRUs and a
//! time-distributed dense head.

mod config;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Arch, ModelConfig, Preset, Task};

use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::math::Real;
use crate::nn::{
    Activation, ActivationLayer, BatchNorm, BiGru, Conv2d, Conv3d, Ctx, Dense, Dropout, Layer, MaxPoolFreq, Param,
    Tensor,
};

#[derive(Clone, Debug)]
enum ConvLayer<T> {
    Plain(Conv2d<T>),
    Volume(Conv3d<T>),
}

impl<T: Real> ConvLayer<T> {
    fn as_layer(&mut self) -> &mut dyn Layer<T> {
        match self {
            Self::Plain(c) => c,
            Self::Volume(c) => c,
        }
    }
}

/// conv → ReLU → batch norm → frequency max-pool → dropout.
#[derive(Clone, Debug)]
struct Block<T> {
    conv: ConvLayer<T>,
    act: ActivationLayer<T>,
    bn: BatchNorm<T>,
    pool: MaxPoolFreq,
    drop: Dropout<T>,
}

impl<T: Real> Block<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = self.conv.as_layer().forward(x, ctx)?;
        let y = self.act.forward(&y, ctx)?;
        let y = self.bn.forward(&y, ctx)?;
        let y = self.pool.forward(&y, ctx)?;
        self.drop.forward(&y, ctx)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let g = self.drop.backward(g);
        let g = Layer::<T>::backward(&mut self.pool, &g);
        let g = self.bn.backward(&g);
        let g = self.act.backward(&g);
        self.conv.as_layer().backward(&g)
    }
}

#[derive(Clone, Debug)]
struct Branch<T> {
    kind: FeatureKind,
    blocks: Vec<Block<T>>,
    out_shape: Vec<usize>,
}

impl<T: Real> Branch<T> {
    fn new(kind: FeatureKind, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (depth, filters, pools) = match kind {
            FeatureKind::Mbe => (cfg.channels, cfg.p, &cfg.pool_mbe),
            FeatureKind::Gcc => (cfg.gcc_depth(), cfg.r, &cfg.pool_gcc),
        };
        let k = cfg.kernel;
        let mut blocks = Vec::with_capacity(cfg.n_cnn_layers);
        for (i, &pool) in pools.iter().enumerate() {
            let conv = match (i, cfg.arch) {
                (0, Arch::C3rnn) => {
                    ConvLayer::Volume(Conv3d::new(cfg.conv3d_depth.unwrap_or(depth), filters, k, k, rng)?)
                }
                (0, Arch::Crnn) => ConvLayer::Plain(Conv2d::new(depth, filters, k, k, rng)?),
                _ => ConvLayer::Plain(Conv2d::new(filters, filters, k, k, rng)?),
            };
            blocks.push(Block {
                conv,
                act: ActivationLayer::new(Activation::Relu),
                bn: BatchNorm::new(filters),
                pool: MaxPoolFreq::new(pool)?,
                drop: Dropout::new(cfg.dropout)?,
            });
        }
        Ok(Self {
            kind,
            blocks,
            out_shape: Vec::new(),
        })
    }

    /// `[B, T, bins, depth] → [B, T, 2·filters]`.
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let mut y = x.clone();
        for b in &mut self.blocks {
            y = b.forward(&y, ctx)?;
        }
        self.out_shape = y.shape().to_vec();
        let s = &self.out_shape;
        y.reshape(&[s[0], s[1], s[2] * s[3]])
    }

    fn backward(&mut self, g: &Tensor<T>) {
        let mut g = g.clone().reshape(&self.out_shape).expect("branch output shape");
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
    }
}

#[derive(Clone, Debug)]
struct Head<T> {
    grus: Vec<(BiGru<T>, Dropout<T>)>,
    hidden: Dense<T>,
    hidden_drop: Dropout<T>,
    out: Dense<T>,
    act: Activation,
    probs: Option<Tensor<T>>,
}

/// A built network together with its configuration.
#[derive(Clone, Debug)]
pub struct Model<T> {
    cfg: ModelConfig,
    mbe: Option<Branch<T>>,
    gcc: Option<Branch<T>>,
    head: Head<T>,
}

impl<T: Real> Model<T> {
    /// Builds the architecture named by `cfg.arch` with seeded Glorot
    /// initialization.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mbe = cfg.use_mbe.then(|| Branch::new(FeatureKind::Mbe, cfg, &mut rng)).transpose()?;
        let gcc = cfg.use_gcc.then(|| Branch::new(FeatureKind::Gcc, cfg, &mut rng)).transpose()?;
        let mut fin = cfg.rnn_input();
        let mut grus = Vec::with_capacity(cfg.gru_layers);
        for _ in 0..cfg.gru_layers {
            grus.push((BiGru::new(fin, cfg.q, &mut rng)?, Dropout::new(cfg.dropout)?));
            fin = 2 * cfg.q;
        }
        let hidden = Dense::new(fin, cfg.q, &mut rng)?;
        let out = Dense::new(cfg.q, cfg.n_classes, &mut rng)?;
        let act = match cfg.task {
            Task::Sed => Activation::Sigmoid,
            Task::Count => Activation::Softmax,
        };
        Ok(Self {
            cfg: cfg.clone(),
            mbe,
            gcc,
            head: Head {
                grus,
                hidden,
                hidden_drop: Dropout::new(cfg.dropout)?,
                out,
                act,
                probs: None,
            },
        })
    }

    pub fn build_c3rnn(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut c = cfg.clone();
        c.arch = Arch::C3rnn;
        Self::build(&c, seed)
    }

    pub fn build_crnn(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut c = cfg.clone();
        c.arch = Arch::Crnn;
        Self::build(&c, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn output_activation(&self) -> Activation {
        self.head.act
    }

    fn check_input(&self, x: Option<&Tensor<T>>, kind: FeatureKind, depth: usize, on: bool) -> Result<()> {
        match (x, on) {
            (None, false) => Ok(()),
            (Some(_), false) => Err(Error::Shape(format!("model has no {} branch", kind.name()))),
            (None, true) => Err(Error::Shape(format!("missing {} input", kind.name()))),
            (Some(x), true) => {
                let s = x.shape();
                if s.len() != 4 || s[2] != kind.bins() || s[3] != depth {
                    Err(Error::Shape(format!(
                        "{} input must be [B, T, {}, {depth}], got {s:?}",
                        kind.name(),
                        kind.bins()
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Frame-wise output probabilities `[B, T, n_classes]`.
    pub fn forward(&mut self, mbe: Option<&Tensor<T>>, gcc: Option<&Tensor<T>>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        self.check_input(mbe, FeatureKind::Mbe, self.cfg.channels, self.cfg.use_mbe)?;
        self.check_input(gcc, FeatureKind::Gcc, self.cfg.gcc_depth(), self.cfg.use_gcc)?;
        if let (Some(a), Some(b)) = (mbe, gcc) {
            if a.shape()[..2] != b.shape()[..2] {
                return Err(Error::Shape(format!("mbe {:?} and gcc {:?} time axes differ", a.shape(), b.shape())));
            }
        }
        let mut parts = Vec::with_capacity(2);
        if let (Some(br), Some(x)) = (self.mbe.as_mut(), mbe) {
            parts.push(br.forward(x, ctx)?);
        }
        if let (Some(br), Some(x)) = (self.gcc.as_mut(), gcc) {
            parts.push(br.forward(x, ctx)?);
        }
        let mut y = if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Tensor::concat_last(&[&parts[0], &parts[1]])?
        };
        for (gru, drop) in &mut self.head.grus {
            y = gru.forward(&y, ctx)?;
            y = drop.forward(&y, ctx)?;
        }
        y = self.head.hidden.forward(&y, ctx)?;
        y = self.head.hidden_drop.forward(&y, ctx)?;
        y = self.head.out.forward(&y, ctx)?;
        let p = self.head.act.apply(&y);
        p.check_finite("model output")?;
        self.head.probs = Some(p.clone());
        Ok(p)
    }

    /// Backpropagates a gradient taken with respect to the pre-activation
    /// outputs (as produced by the fused loss gradients).
    pub fn backward(&mut self, grad_logits: &Tensor<T>) {
        let mut g = self.head.out.backward(grad_logits);
        g = self.head.hidden_drop.backward(&g);
        g = self.head.hidden.backward(&g);
        for (gru, drop) in self.head.grus.iter_mut().rev() {
            g = drop.backward(&g);
            g = gru.backward(&g);
        }
        let widths: Vec<usize> = [
            self.mbe.as_ref().map(|_| 2 * self.cfg.p),
            self.gcc.as_ref().map(|_| 2 * self.cfg.r),
        ]
        .into_iter()
        .flatten()
        .collect();
        let mut parts = g.split_last(&widths).into_iter();
        if let Some(br) = self.mbe.as_mut() {
            br.backward(&parts.next().unwrap());
        }
        if let Some(br) = self.gcc.as_mut() {
            br.backward(&parts.next().unwrap());
        }
    }

    /// Trainable tensors in a fixed order with stable dotted names.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for br in [self.mbe.as_mut(), self.gcc.as_mut()].into_iter().flatten() {
            let kind = br.kind.name();
            for (i, b) in br.blocks.iter_mut().enumerate() {
                for (n, p) in b.conv.as_layer().params_mut() {
                    out.push((format!("{kind}.{i}.conv.{n}"), p));
                }
                for (n, p) in b.bn.params_mut() {
                    out.push((format!("{kind}.{i}.bn.{n}"), p));
                }
            }
        }
        for (i, (gru, _)) in self.head.grus.iter_mut().enumerate() {
            for (n, p) in gru.params_mut() {
                out.push((format!("gru.{i}.{n}"), p));
            }
        }
        for (n, p) in self.head.hidden.params_mut() {
            out.push((format!("dense.{n}"), p));
        }
        for (n, p) in self.head.out.params_mut() {
            out.push((format!("output.{n}"), p));
        }
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for br in [self.mbe.as_mut(), self.gcc.as_mut()].into_iter().flatten() {
            let kind = br.kind.name();
            for (i, b) in br.blocks.iter_mut().enumerate() {
                out.push((format!("{kind}.{i}.bn.running_mean"), &mut b.bn.running_mean));
                out.push((format!("{kind}.{i}.bn.running_var"), &mut b.bn.running_var));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|(_, p)| p.len()).sum()
    }

    /// Copies every parameter and buffer value.
    pub fn snapshot(&mut self) -> Vec<Tensor<T>> {
        let mut v: Vec<Tensor<T>> = self.params_mut().into_iter().map(|(_, p)| p.value.clone()).collect();
        v.extend(self.buffers_mut().into_iter().map(|(_, b)| b.clone()));
        v
    }

    /// Restores values captured by [`Model::snapshot`].
    pub fn restore(&mut self, snap: &[Tensor<T>]) -> Result<()> {
        let mut it = snap.iter();
        let mut next = |target_shape: &[usize]| -> Result<Tensor<T>> {
            let t = it.next().ok_or_else(|| Error::Shape("snapshot too short".into()))?;
            if t.shape() != target_shape {
                return Err(Error::Shape(format!("snapshot tensor {:?} vs {:?}", t.shape(), target_shape)));
            }
            Ok(t.clone())
        };
        for (_, p) in self.params_mut() {
            p.value = next(p.value.shape())?;
        }
        for (_, b) in self.buffers_mut() {
            *b = next(b.shape())?;
        }
        Ok(())
    }
}
