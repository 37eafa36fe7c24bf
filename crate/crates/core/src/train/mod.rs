//! Mini-batch training with early stopping on the test-split error rate,
//! plus the source-counting and architecture-comparison drivers.

mod data;
mod eval;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{assemble, make_batches, windows, Batch, Example, Window};
pub use eval::{
    evaluate, evaluate_counts, predict, predict_counts, predict_proba, threshold_roll, CountReport, EvalReport,
};

use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::math::Real;
use crate::model::{Arch, Model, ModelConfig, Task};
use crate::nn::{bce_logit_grad, cce_logit_grad, clip_grad_norm, loss_bce, loss_cce, Adam, AdamState, Ctx, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    /// Stop once the monitored error has not improved for `patience` epochs.
    pub early_stop: bool,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub threshold: f64,
    pub clip_norm: f64,
    pub segment_s: f64,
    pub seed: u64,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 100,
            early_stop: true,
            batch_size: 32,
            seq_len: 128,
            lr: 1e-4,
            threshold: 0.5,
            clip_norm: 5.0,
            segment_s: 1.0,
            seed: 0,
            task: Task::Sed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_epochs == 0 || self.patience == 0 || self.patience >= self.max_epochs {
            return bad(format!(
                "need 0 < patience ({}) < max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch size and sequence length must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0) || !(self.segment_s > 0.0) {
            return bad("learning rate, clip norm and segment length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Segment error rate, or the frame-wise count error for counting.
    pub er: f64,
    /// Segment F-score in percent, or the average per-level count accuracy.
    pub f: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_er: f64,
    pub best_f: f64,
    pub stop: StopReason,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,er,f,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.loss, e.er, e.f, e.seconds);
        }
        s
    }

    /// The same log with wall-clock fields zeroed, for replay comparisons.
    pub fn without_timing(&self) -> Self {
        let mut l = self.clone();
        l.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        l
    }
}

/// Patience bookkeeping; an epoch improves only with a strictly lower error.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, er: f64) -> Verdict {
        if er < self.best {
            self.best = er;
            self.best_epoch = epoch;
            Verdict::Improved
        } else if epoch - self.best_epoch >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }
}

/// Optional observers for a run.
#[derive(Default)]
pub struct Hooks<'a> {
    /// Monotonic seconds; epochs report zero duration without it.
    pub clock: Option<&'a dyn Fn() -> f64>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Result of [`train`]: the model is left holding the best parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub optimizer: AdamState,
    /// Word position of the shuffling/dropout stream when training ended.
    pub rng_word_pos: u128,
}

fn monitor<T: Real>(model: &mut Model<T>, test: &[Example], cfg: &TrainConfig) -> Result<(f64, f64)> {
    match cfg.task {
        Task::Sed => {
            let r = evaluate(model, test, cfg.seq_len, cfg.threshold, cfg.segment_s)?;
            Ok((r.er, r.f))
        }
        Task::Count => {
            let r = evaluate_counts(model, test, cfg.seq_len)?;
            Ok((r.frame_error, r.accuracy.average))
        }
    }
}

fn train_epoch<T: Real>(
    model: &mut Model<T>,
    train: &[Example],
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batches = make_batches(train, cfg.seq_len, cfg.batch_size, rng)?;
    let (mut total, mut rows) = (0.0, 0usize);
    for win in &batches {
        let batch = assemble::<T>(train, win, cfg.seq_len)?;
        model.zero_grad();
        let mut ctx = Ctx {
            mode: Mode::Train,
            rng: &mut *rng,
            lengths: Some(&batch.lengths),
        };
        let p = model.forward(batch.mbe.as_ref(), batch.gcc.as_ref(), &mut ctx)?;
        let (loss, grad) = match cfg.task {
            Task::Sed => (
                loss_bce(&p, &batch.roll, Some(&batch.valid))?,
                bce_logit_grad(&p, &batch.roll, Some(&batch.valid))?,
            ),
            Task::Count => (
                loss_cce(&p, &batch.counts, Some(&batch.valid))?,
                cce_logit_grad(&p, &batch.counts, Some(&batch.valid))?,
            ),
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        model.backward(&grad);
        let mut params: Vec<_> = model.params_mut().into_iter().map(|(_, p)| p).collect();
        for p in &params {
            p.grad.check_finite("gradient")?;
        }
        clip_grad_norm(&mut params, cfg.clip_norm);
        adam.step(&mut params)?;
        let n = batch.valid.iter().filter(|v| **v).count();
        total += loss * n as f64;
        rows += n;
    }
    Ok(total / rows.max(1) as f64)
}

/// Trains `model` on `train`, monitoring `test` after every epoch, and
/// restores the parameters of the best epoch before returning.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
    hooks: &mut Hooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if model.config().task != cfg.task {
        return Err(Error::InvalidConfig(format!(
            "model head is for {} but training task is {}",
            model.config().task.name(),
            cfg.task.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.snapshot();
    let mut best_f = 0.0;
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let now = |h: &Hooks<'_>| h.clock.map_or(0.0, |c| c());
    for epoch in 1..=cfg.max_epochs {
        let t0 = now(hooks);
        let loss = train_epoch(model, train_set, cfg, &mut adam, &mut rng)?;
        let (er, f) = monitor(model, test_set, cfg)?;
        let rec = EpochRecord {
            epoch,
            loss,
            er,
            f,
            seconds: now(hooks) - t0,
        };
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&rec);
        }
        epochs.push(rec);
        match stopper.update(epoch, er) {
            Verdict::Improved => {
                best = model.snapshot();
                best_f = f;
            }
            Verdict::Stop if cfg.early_stop => {
                stop = StopReason::Patience;
                break;
            }
            _ => {}
        }
    }
    model.restore(&best)?;
    Ok(TrainOutcome {
        log: TrainLog {
            epochs,
            best_epoch: stopper.best_epoch,
            best_er: stopper.best,
            best_f,
            stop,
        },
        optimizer: adam.state,
        rng_word_pos: rng.get_word_pos(),
    })
}

/// Source-count model trained on a single feature kind.
#[derive(Clone, Debug, PartialEq)]
pub struct CountResult {
    pub kind: FeatureKind,
    pub param_count: usize,
    pub log: TrainLog,
    pub report: CountReport,
}

fn keep_kind(examples: &[Example], kind: FeatureKind) -> Vec<Example> {
    examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            match kind {
                FeatureKind::Mbe => e.gcc = None,
                FeatureKind::Gcc => e.mbe = None,
            }
            e
        })
        .collect()
}

/// Trains one counting model per kind, each with only that feature branch.
pub fn run_count_experiment<T: Real>(
    train_set: &[Example],
    test_set: &[Example],
    base: &ModelConfig,
    cfg: &TrainConfig,
    kinds: &[FeatureKind],
    model_seed: u64,
    hooks: &mut Hooks<'_>,
) -> Result<Vec<CountResult>> {
    let mut cfg = cfg.clone();
    cfg.task = Task::Count;
    let mut out = Vec::new();
    for &kind in kinds {
        let mut mc = base.clone();
        mc.task = Task::Count;
        mc.use_mbe = kind == FeatureKind::Mbe;
        mc.use_gcc = kind == FeatureKind::Gcc;
        let tr = keep_kind(train_set, kind);
        let te = keep_kind(test_set, kind);
        let mut model = Model::<T>::build(&mc, model_seed)?;
        let param_count = model.param_count();
        let outcome = train(&mut model, &tr, &te, &cfg, hooks)?;
        let report = evaluate_counts(&mut model, &te, cfg.seq_len)?;
        out.push(CountResult {
            kind,
            param_count,
            log: outcome.log,
            report,
        });
    }
    Ok(out)
}

/// Paired learning curves for the two architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub param_count: usize,
    pub c3rnn: TrainLog,
    pub crnn: TrainLog,
}

impl Comparison {
    pub const CSV_HEADER: &'static str = "epoch,arch,loss,er,f";

    pub fn curves_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (arch, log) in [(Arch::C3rnn, &self.c3rnn), (Arch::Crnn, &self.crnn)] {
            for e in &log.epochs {
                let _ = writeln!(s, "{},{},{},{},{}", e.epoch, arch.name(), e.loss, e.er, e.f);
            }
        }
        s
    }
}

/// Parameter counts of both architectures for `cfg`; an error if unequal.
pub fn check_parity(cfg: &ModelConfig) -> Result<usize> {
    let a = Model::<f32>::build_c3rnn(cfg, 0)?.param_count();
    let b = Model::<f32>::build_crnn(cfg, 0)?.param_count();
    if a != b {
        return Err(Error::InvalidConfig(format!("parameter parity failed: c3rnn {a} vs crnn {b}")));
    }
    Ok(a)
}

/// Trains both architectures from the same seeds for the full epoch budget
/// (no early stopping) so the curves share one epoch grid.
pub fn compare_architectures<T: Real>(
    train_set: &[Example],
    test_set: &[Example],
    base: &ModelConfig,
    cfg: &TrainConfig,
    model_seed: u64,
    hooks: &mut Hooks<'_>,
) -> Result<Comparison> {
    let param_count = check_parity(base)?;
    let mut cfg = cfg.clone();
    cfg.early_stop = false;
    let mut a = Model::<T>::build_c3rnn(base, model_seed)?;
    let c3rnn = train(&mut a, train_set, test_set, &cfg, hooks)?.log;
    let mut b = Model::<T>::build_crnn(base, model_seed)?;
    let crnn = train(&mut b, train_set, test_set, &cfg, hooks)?.log;
    Ok(Comparison { param_count, c3rnn, crnn })
}

#[cfg(test)]
mod tests;
