//! The end-to-end operations behind each command, usable without the CLI.

use std::path::{Path, PathBuf};
use std::time::Instant;

use polysed_core::audio::{event_roll, source_counts};
use polysed_core::features::{gcc_multires, log_mbe, normalize_features, FeatureConfig, FeatureStats};
use polysed_core::metrics::SegmentCounts;
use polysed_core::model::{Arch, Model, ModelConfig, Preset, Task};
use polysed_core::train::{
    check_parity, compare_architectures, evaluate, evaluate_counts, run_count_experiment, train, Comparison,
    CountReport, EpochRecord, Example, Hooks, TrainConfig, TrainLog,
};
use polysed_core::{EventInstance, FeatureKind, FeatureTensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{load_annotations, AnnotationFormat};
use crate::cache::{feature_path, load_feature_set, read_features, write_features, FeatureEntry, FeatureSet, FEATURES_FILE, FEATURE_VERSION};
use crate::checkpoint::{Checkpoint, CheckpointMeta, NormStats, OptimizerMeta};
use crate::dataset::{csv_path, load_dataset_manifest, wav_path, write_json, AudioFormat, Split};
use crate::error::{read_file, write_file, Error, Result};
use crate::wav::read_wav;

/// Extracts the requested kinds for every recording of a synthesized dataset.
pub fn extract_features(
    data: &Path,
    format: AudioFormat,
    kinds: &[FeatureKind],
    out: &Path,
    cfg: &FeatureConfig,
) -> Result<FeatureSet> {
    let kinds = canonical_kinds(kinds)?;
    if kinds.contains(&FeatureKind::Gcc) && format.channels() < 2 {
        return Err(Error::Usage(format!(
            "gcc can only be extracted for more than one channel; the {} format has {}",
            format.name(),
            format.channels()
        )));
    }
    let manifest = load_dataset_manifest(data)?;
    let entries: Vec<FeatureEntry> = manifest
        .recordings
        .par_iter()
        .map(|rec| {
            let path = wav_path(data, rec.split, &rec.id, format);
            let clip = read_wav(&path)?;
            if clip.n_channels() != format.channels() {
                return Err(Error::format(
                    &path,
                    format!("{} channels, the {} format needs {}", clip.n_channels(), format.name(), format.channels()),
                ));
            }
            let mut n_frames = 0;
            for &kind in &kinds {
                let f = match kind {
                    FeatureKind::Mbe => log_mbe(&clip, cfg)?,
                    FeatureKind::Gcc => gcc_multires(&clip, cfg)?,
                };
                n_frames = f.n_frames();
                write_features(&feature_path(out, rec.split, &rec.id, kind), &f)?;
            }
            let csv = csv_path(data, rec.split, &rec.id);
            write_file(&csv_path(out, rec.split, &rec.id), read_file(&csv)?)?;
            Ok(FeatureEntry {
                id: rec.id.clone(),
                split: rec.split,
                n_frames,
            })
        })
        .collect::<Result<_>>()?;
    let set = FeatureSet {
        format_version: FEATURE_VERSION,
        audio_format: format,
        channels: format.channels(),
        kinds,
        config: cfg.clone(),
        sample_rate: manifest.synth.sample_rate,
        hop: cfg.hop_seconds(),
        classes: manifest.classes,
        max_polyphony: manifest.synth.max_polyphony,
        recordings: entries,
    };
    write_json(&out.join(FEATURES_FILE), &set)?;
    Ok(set)
}

/// Deduplicated kinds in mbe, gcc order.
pub fn canonical_kinds(kinds: &[FeatureKind]) -> Result<Vec<FeatureKind>> {
    let out: Vec<FeatureKind> = [FeatureKind::Mbe, FeatureKind::Gcc]
        .into_iter()
        .filter(|k| kinds.contains(k))
        .collect();
    if out.is_empty() {
        return Err(Error::Usage("at least one feature kind is required".into()));
    }
    Ok(out)
}

pub fn parse_kinds(list: &str) -> Result<Vec<FeatureKind>> {
    let kinds = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| FeatureKind::parse(s).ok_or_else(|| Error::Usage(format!("unknown feature kind {s:?} (mbe or gcc)"))))
        .collect::<Result<Vec<_>>>()?;
    canonical_kinds(&kinds)
}

/// Raw features and annotations of one recording.
#[derive(Clone, Debug)]
pub struct LoadedRecording {
    pub id: String,
    pub mbe: Option<FeatureTensor>,
    pub gcc: Option<FeatureTensor>,
    pub events: Vec<EventInstance>,
}

pub fn load_split(dir: &Path, set: &FeatureSet, split: Split, kinds: &[FeatureKind]) -> Result<Vec<LoadedRecording>> {
    for k in kinds {
        if !set.kinds.contains(k) {
            return Err(Error::Usage(format!("{} features were not extracted in {}", k.name(), dir.display())));
        }
    }
    let entries: Vec<&FeatureEntry> = set.entries(split).collect();
    entries
        .par_iter()
        .map(|e| {
            let load = |k: FeatureKind| -> Result<Option<FeatureTensor>> {
                if !kinds.contains(&k) {
                    return Ok(None);
                }
                let path = feature_path(dir, split, &e.id, k);
                let f = read_features(&path)?;
                if f.n_frames() != e.n_frames {
                    return Err(Error::format(&path, format!("{} frames, manifest says {}", f.n_frames(), e.n_frames)));
                }
                Ok(Some(f))
            };
            Ok(LoadedRecording {
                id: e.id.clone(),
                mbe: load(FeatureKind::Mbe)?,
                gcc: load(FeatureKind::Gcc)?,
                events: load_annotations(&csv_path(dir, split, &e.id), AnnotationFormat::PolysedCsv)?,
            })
        })
        .collect()
}

pub fn compute_stats(recs: &[LoadedRecording]) -> Result<NormStats> {
    let stats = |get: fn(&LoadedRecording) -> Option<&FeatureTensor>| -> Result<Option<FeatureStats>> {
        let feats: Vec<&FeatureTensor> = recs.iter().filter_map(get).collect();
        if feats.is_empty() {
            Ok(None)
        } else {
            FeatureStats::compute(feats).map(Some).map_err(Error::from)
        }
    };
    Ok(NormStats {
        mbe: stats(|r| r.mbe.as_ref())?,
        gcc: stats(|r| r.gcc.as_ref())?,
    })
}

/// Normalized network examples; count targets saturate at `max_count`.
pub fn to_examples(recs: &[LoadedRecording], stats: &NormStats, classes: &[String], max_count: usize) -> Result<Vec<Example>> {
    recs.iter()
        .map(|r| {
            let norm = |f: &Option<FeatureTensor>, kind: FeatureKind| -> Result<Option<FeatureTensor>> {
                match f {
                    None => Ok(None),
                    Some(f) => {
                        let s = stats
                            .get(kind)
                            .ok_or_else(|| Error::Usage(format!("no {} statistics", kind.name())))?;
                        Ok(Some(normalize_features(s, f)?))
                    }
                }
            };
            let mbe = norm(&r.mbe, FeatureKind::Mbe)?;
            let gcc = norm(&r.gcc, FeatureKind::Gcc)?;
            let first = mbe.as_ref().or(gcc.as_ref()).ok_or_else(|| Error::Usage("no features selected".into()))?;
            let (t, hop) = (first.n_frames(), first.hop);
            let roll = event_roll(&r.events, classes, hop, t)?;
            let counts = source_counts(&r.events, hop, t).into_iter().map(|c| c.min(max_count)).collect();
            Ok(Example::new(r.id.clone(), mbe, gcc, roll, counts)?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub preset: Preset,
    pub arch: Arch,
    pub task: Task,
    pub seed: u64,
    /// Feature kinds fed to the model; `None` takes every extracted kind for
    /// detection and mbe (else gcc) for counting.
    pub use_kinds: Option<Vec<FeatureKind>>,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: Option<usize>,
    pub seq_len: Option<usize>,
    pub dropout: Option<f64>,
    pub threshold: f64,
    /// Split whose error drives early stopping and best-model selection.
    pub monitor: Split,
    /// Record per-epoch wall time in the log.
    pub timing: bool,
}

impl TrainOptions {
    pub fn new(preset: Preset, arch: Arch, task: Task, seed: u64) -> Self {
        let d = TrainConfig::default();
        Self {
            preset,
            arch,
            task,
            seed,
            use_kinds: None,
            epochs: d.max_epochs,
            patience: d.patience,
            lr: d.lr,
            batch_size: None,
            seq_len: None,
            dropout: None,
            threshold: d.threshold,
            monitor: Split::Test,
            timing: true,
        }
    }

    fn kinds(&self, set: &FeatureSet) -> Result<Vec<FeatureKind>> {
        match (&self.use_kinds, self.task) {
            (Some(k), _) => canonical_kinds(k),
            (None, Task::Sed) => Ok(set.kinds.clone()),
            (None, Task::Count) => Ok(vec![set.kinds[0]]),
        }
    }

    pub fn model_config(&self, set: &FeatureSet) -> Result<ModelConfig> {
        let kinds = self.kinds(set)?;
        let use_gcc = kinds.contains(&FeatureKind::Gcc);
        let mut cfg = match self.task {
            Task::Sed => ModelConfig::preset(self.preset, self.arch, set.channels, set.classes.len(), use_gcc),
            Task::Count => {
                if kinds.len() != 1 {
                    return Err(Error::Usage("counting uses exactly one feature kind".into()));
                }
                let mut c = ModelConfig::counting(self.preset, set.channels, set.max_polyphony, kinds[0]);
                c.arch = self.arch;
                c
            }
        };
        cfg.use_mbe = kinds.contains(&FeatureKind::Mbe);
        if let Some(s) = self.seq_len {
            cfg.seq_len = s;
        }
        if let Some(d) = self.dropout {
            cfg.dropout = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size.unwrap_or(self.preset.batch_size()),
            seq_len: self.seq_len.unwrap_or(self.preset.seq_len()),
            lr: self.lr,
            threshold: self.threshold,
            seed: self.seed,
            task: self.task,
            ..TrainConfig::default()
        }
    }
}

/// Evaluation summary written as `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    /// Segment error rate, or the frame-wise count error for counting.
    pub er: f64,
    /// Segment F-score in percent, or the average count accuracy.
    pub f: f64,
    pub n_recordings: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub totals: Option<SegmentCounts>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_segments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub count: Option<CountReport>,
    pub config: ConfigEcho,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub audio_format: AudioFormat,
    pub kinds: Vec<FeatureKind>,
    pub classes: Vec<String>,
}

/// Prepared train/test examples for one feature directory.
pub struct Prepared {
    pub set: FeatureSet,
    pub kinds: Vec<FeatureKind>,
    pub stats: NormStats,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn prepare(dir: &Path, kinds: Option<&[FeatureKind]>, need_test: bool) -> Result<Prepared> {
    let set = load_feature_set(dir)?;
    let kinds = match kinds {
        Some(k) => canonical_kinds(k)?,
        None => set.kinds.clone(),
    };
    let train_raw = load_split(dir, &set, Split::Train, &kinds)?;
    if train_raw.is_empty() {
        return Err(Error::Usage(format!("{} has no training recordings", dir.display())));
    }
    let test_raw = load_split(dir, &set, Split::Test, &kinds)?;
    if need_test && test_raw.is_empty() {
        return Err(Error::Usage(format!("{} has no test recordings", dir.display())));
    }
    let stats = compute_stats(&train_raw)?;
    let train = to_examples(&train_raw, &stats, &set.classes, set.max_polyphony)?;
    let test = to_examples(&test_raw, &stats, &set.classes, set.max_polyphony)?;
    Ok(Prepared {
        set,
        kinds,
        stats,
        train,
        test,
    })
}

pub struct TrainArtifacts {
    pub log: TrainLog,
    pub metrics: MetricsReport,
    pub checkpoint: Checkpoint,
}

fn clock() -> impl Fn() -> f64 {
    let start = Instant::now();
    move || start.elapsed().as_secs_f64()
}

fn score(model: &mut Model<f32>, examples: &[Example], cfg: &TrainConfig, split: Split, echo: ConfigEcho) -> Result<MetricsReport> {
    Ok(match cfg.task {
        Task::Sed => {
            let r = evaluate(model, examples, cfg.seq_len, cfg.threshold, cfg.segment_s)?;
            MetricsReport {
                split,
                er: r.er,
                f: r.f,
                n_recordings: r.n_recordings,
                totals: Some(r.totals),
                n_segments: Some(r.n_segments),
                count: None,
                config: echo,
            }
        }
        Task::Count => {
            let r = evaluate_counts(model, examples, cfg.seq_len)?;
            MetricsReport {
                split,
                er: r.frame_error,
                f: r.accuracy.average,
                n_recordings: examples.len(),
                totals: None,
                n_segments: None,
                count: Some(r),
                config: echo,
            }
        }
    })
}

/// Trains one model and scores its best snapshot on the monitored split.
pub fn run_training(
    dir: &Path,
    opts: &TrainOptions,
    on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainArtifacts> {
    let set = load_feature_set(dir)?;
    let mc = opts.model_config(&set)?;
    let cfg = opts.train_config();
    cfg.validate()?;
    let kinds = opts.kinds(&set)?;
    let data = prepare(dir, Some(&kinds), opts.monitor == Split::Test)?;
    let monitor = match opts.monitor {
        Split::Train => &data.train,
        Split::Test => &data.test,
    };
    let mut model = Model::<f32>::build(&mc, opts.seed)?;
    let clock = clock();
    let mut hooks = Hooks {
        clock: if opts.timing { Some(&clock) } else { None },
        on_epoch: on_epoch.map(|f| f as &mut dyn FnMut(&EpochRecord)),
    };
    let outcome = train(&mut model, &data.train, monitor, &cfg, &mut hooks)?;
    let echo = ConfigEcho {
        model: mc.clone(),
        train: cfg.clone(),
        model_seed: opts.seed,
        audio_format: data.set.audio_format,
        kinds: data.kinds.clone(),
        classes: data.set.classes.clone(),
    };
    let metrics = score(&mut model, monitor, &cfg, opts.monitor, echo)?;
    let o = &outcome.optimizer;
    let meta = CheckpointMeta {
        dtype: "f32".into(),
        model: mc,
        model_seed: opts.seed,
        train: cfg,
        classes: data.set.classes.clone(),
        audio_format: data.set.audio_format,
        kinds: data.kinds.clone(),
        features: data.set.config.clone(),
        stats: data.stats.clone(),
        best_epoch: outcome.log.best_epoch,
        best_er: outcome.log.best_er,
        best_f: outcome.log.best_f,
        optimizer: OptimizerMeta {
            step: o.step,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        },
        rng_word_pos: outcome.rng_word_pos.to_string(),
    };
    let checkpoint = Checkpoint::capture(&mut model, meta, &outcome.optimizer);
    Ok(TrainArtifacts {
        log: outcome.log,
        metrics,
        checkpoint,
    })
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const TRAIN_LOG_JSON: &str = "train_log.json";
pub const METRICS_FILE: &str = "metrics.json";

pub fn write_training(out: &Path, a: &TrainArtifacts) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = [CHECKPOINT_FILE, TRAIN_LOG_CSV, TRAIN_LOG_JSON, METRICS_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    crate::checkpoint::write_checkpoint(&paths[0], &a.checkpoint)?;
    write_file(&paths[1], a.log.to_csv())?;
    write_json(&paths[2], &a.log)?;
    write_json(&paths[3], &a.metrics)?;
    Ok(paths)
}

/// Scores a checkpoint on one split of a feature directory, normalizing with
/// the statistics stored in the checkpoint.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dir: &Path, split: Split) -> Result<MetricsReport> {
    let meta = &ckpt.meta;
    let set = load_feature_set(dir)?;
    if set.classes != meta.classes {
        return Err(Error::Usage(format!(
            "class list {:?} differs from the checkpoint's {:?}",
            set.classes, meta.classes
        )));
    }
    if set.channels != meta.model.channels {
        return Err(Error::Usage(format!(
            "{}-channel features for a {}-channel model",
            set.channels, meta.model.channels
        )));
    }
    let raw = load_split(dir, &set, split, &meta.kinds)?;
    if raw.is_empty() {
        return Err(Error::Usage(format!("{} has no {} recordings", dir.display(), split.name())));
    }
    let max_count = match meta.model.task {
        Task::Count => meta.model.n_classes - 1,
        Task::Sed => set.max_polyphony,
    };
    let examples = to_examples(&raw, &meta.stats, &set.classes, max_count)?;
    let mut model = ckpt.model()?;
    let echo = ConfigEcho {
        model: meta.model.clone(),
        train: meta.train.clone(),
        model_seed: meta.model_seed,
        audio_format: meta.audio_format,
        kinds: meta.kinds.clone(),
        classes: meta.classes.clone(),
    };
    score(&mut model, &examples, &meta.train, split, echo)
}

/// Model configuration shared by both architectures in a comparison.
pub fn comparison_config(set: &FeatureSet, preset: Preset, kinds: &[FeatureKind]) -> Result<ModelConfig> {
    let mut opts = TrainOptions::new(preset, Arch::C3rnn, Task::Sed, 0);
    opts.use_kinds = Some(kinds.to_vec());
    opts.model_config(set)
}

/// Parameter count shared by both architectures, or an error.
pub fn parity(cfg: &ModelConfig) -> Result<usize> {
    Ok(check_parity(cfg)?)
}

pub fn run_compare(prepared: &Prepared, base: &ModelConfig, opts: &TrainOptions) -> Result<Comparison> {
    let cfg = opts.train_config();
    let clock = clock();
    let mut hooks = Hooks {
        clock: if opts.timing { Some(&clock) } else { None },
        on_epoch: None,
    };
    let monitor = match opts.monitor {
        Split::Train => &prepared.train,
        Split::Test => &prepared.test,
    };
    Ok(compare_architectures::<f32>(&prepared.train, monitor, base, &cfg, opts.seed, &mut hooks)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountEntry {
    pub kind: FeatureKind,
    pub param_count: usize,
    pub best_epoch: usize,
    pub report: CountReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub max_polyphony: usize,
    pub results: Vec<CountEntry>,
    pub train: TrainConfig,
}

/// Trains one counting model per feature kind and scores it on the monitored split.
pub fn run_count(prepared: &Prepared, opts: &TrainOptions) -> Result<CountSummary> {
    let mut o = opts.clone();
    o.task = Task::Count;
    o.use_kinds = Some(vec![prepared.kinds[0]]);
    let base = o.model_config(&prepared.set)?;
    let cfg = o.train_config();
    let clock = clock();
    let mut hooks = Hooks {
        clock: if opts.timing { Some(&clock) } else { None },
        on_epoch: None,
    };
    let monitor = match opts.monitor {
        Split::Train => &prepared.train,
        Split::Test => &prepared.test,
    };
    let results = run_count_experiment::<f32>(&prepared.train, monitor, &base, &cfg, &prepared.kinds, opts.seed, &mut hooks)?
        .into_iter()
        .map(|r| CountEntry {
            kind: r.kind,
            param_count: r.param_count,
            best_epoch: r.log.best_epoch,
            report: r.report,
        })
        .collect();
    Ok(CountSummary {
        max_polyphony: prepared.set.max_polyphony,
        results,
        train: cfg,
    })
}
