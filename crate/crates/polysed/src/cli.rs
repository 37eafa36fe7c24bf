//! Command-line surface. Every option can also come from a TOML file given
//! with `--config`, using one table per command (`[synth]`, `[train]`, ...);
//! flags win over file values.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use polysed_core::features::FeatureConfig;
use polysed_core::model::{Arch, Preset, Task};
use polysed_core::synth::{procedural_bank, split_bank, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::bank::{read_event_bank, write_event_bank};
use crate::cache::{load_feature_set, FEATURES_FILE};
use crate::checkpoint::read_checkpoint;
use crate::dataset::{synth_dataset, write_json, AudioFormat, DatasetSpec, Split, MANIFEST_FILE};
use crate::error::{read_text, write_file, Error, Result};
use crate::pipeline::{
    comparison_config, evaluate_checkpoint, extract_features, parity, parse_kinds, prepare, run_compare, run_count,
    run_training, write_training, TrainOptions,
};
use crate::report::{manifest_path_for_file, RunManifest, RUN_MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "polysed", version, about = "Multichannel polyphonic sound event detection toolkit")]
pub struct Cli {
    /// TOML file with per-command defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural event bank (class subdirectories of WAV files).
    Bank(BankArgs),
    /// Synthesize a dataset of FOA, binaural and mono recordings.
    Synth(SynthArgs),
    /// Extract and cache mbe / gcc features.
    Features(FeaturesArgs),
    /// Train a detection or counting model.
    Train(TrainArgs),
    /// Score a checkpoint on a feature directory.
    Eval(EvalArgs),
    /// Train C3RNN and CRNN side by side and write paired learning curves.
    Compare(CompareArgs),
    /// Source-count experiment: one softmax model per feature kind.
    Count(CountArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankArgs {
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of classes [default: 4]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Examples per class [default: 20]
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Sample rate in Hz [default: 44100]
    #[arg(long)]
    pub rate: Option<u32>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub bank: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Maximum number of overlapping events: 1, 3 or 6
    #[arg(long)]
    pub polyphony: Option<usize>,
    /// Training recordings
    #[arg(long)]
    pub n: Option<usize>,
    /// Test recordings [default: max(1, n/5)]
    #[arg(long)]
    pub n_test: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recording length in seconds [default: 30]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Share of each bank class used for training recordings [default: 0.8]
    #[arg(long)]
    pub split_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// mono, bin or foa
    #[arg(long)]
    pub format: Option<String>,
    /// Comma-separated list of mbe, gcc [default: mbe]
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Options shared by the training commands.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// o1, o3, o6 or tut
    #[arg(long)]
    pub preset: Option<String>,
    /// c3rnn or crnn [default: c3rnn]
    #[arg(long)]
    pub arch: Option<String>,
    /// sed or count [default: sed]
    #[arg(long)]
    pub task: Option<String>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// [default: 1000]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without improvement before stopping [default: 100]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Adam learning rate [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: preset]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Frames per sequence [default: preset]
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// [default: preset]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Split monitored for early stopping: test or train [default: test]
    #[arg(long)]
    pub monitor: Option<String>,
    /// Feature kinds fed to the model, comma-separated [default: all extracted]
    #[arg(long = "use")]
    pub use_kinds: Option<String>,
    /// Record per-epoch wall time; false writes 0 so logs are reproducible [default: true]
    #[arg(long, value_name = "BOOL")]
    pub timing: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Metrics JSON path
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// test or train [default: test]
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bank: BankArgs,
    pub synth: SynthArgs,
    pub features: FeaturesArgs,
    pub train: TrainArgs,
    pub eval: EvalArgs,
    pub compare: TrainArgs,
    pub count: TrainArgs,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

macro_rules! fill {
    ($dst:expr, $src:expr; $($f:ident),+) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )+
    };
}

impl BankArgs {
    fn merge(mut self, c: &Self) -> Self {
        fill!(self, c; out, classes, per_class, rate, seed);
        self
    }
}

impl SynthArgs {
    fn merge(mut self, c: &Self) -> Self {
        fill!(self, c; bank, out, polyphony, n, n_test, seed, duration, split_ratio);
        self
    }
}

impl FeaturesArgs {
    fn merge(mut self, c: &Self) -> Self {
        fill!(self, c; data, format, kinds, out);
        self
    }
}

impl TrainArgs {
    fn merge(mut self, c: &Self) -> Self {
        fill!(self, c; features, preset, arch, task, seed, out, epochs, patience, lr, batch_size, seq_len, dropout, threshold, monitor, use_kinds, timing);
        self
    }

    fn options(&self) -> Result<TrainOptions> {
        let preset = Preset::parse(self.preset.as_deref().ok_or_else(|| missing("train", "--preset"))?)?;
        let arch = Arch::parse(self.arch.as_deref().unwrap_or("c3rnn"))?;
        let task = Task::parse(self.task.as_deref().unwrap_or("sed"))?;
        let mut o = TrainOptions::new(preset, arch, task, self.seed.unwrap_or(0));
        o.epochs = self.epochs.unwrap_or(o.epochs);
        o.patience = self.patience.unwrap_or(o.patience);
        o.lr = self.lr.unwrap_or(o.lr);
        o.batch_size = self.batch_size;
        o.seq_len = self.seq_len;
        o.dropout = self.dropout;
        o.threshold = self.threshold.unwrap_or(o.threshold);
        o.monitor = self.monitor.as_deref().unwrap_or("test").parse()?;
        o.use_kinds = self.use_kinds.as_deref().map(parse_kinds).transpose()?;
        o.timing = self.timing.unwrap_or(true);
        Ok(o)
    }
}

impl EvalArgs {
    fn merge(mut self, c: &Self) -> Self {
        fill!(self, c; checkpoint, features, out, split);
        self
    }
}

fn missing(command: &str, flag: &str) -> Error {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = cmd
        .find_subcommand_mut(command)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    Error::Usage(format!("missing required option {flag}\n\n{usage}"))
}

fn need<T: Clone>(v: &Option<T>, command: &str, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| missing(command, flag))
}

/// Parses `POLYSED_THREADS` and sizes the worker pool.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("POLYSED_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("POLYSED_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    Ok(())
}

/// Runs a parsed invocation. `argv` is recorded in the run manifest.
pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let started = Instant::now();
    let file = match &cli.config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    let mut manifest = match cli.command {
        Command::Bank(a) => cmd_bank(a.merge(&file.bank), argv)?,
        Command::Synth(a) => cmd_synth(a.merge(&file.synth), argv)?,
        Command::Features(a) => cmd_features(a.merge(&file.features), argv)?,
        Command::Train(a) => cmd_train(a.merge(&file.train), argv)?,
        Command::Eval(a) => cmd_eval(a.merge(&file.eval), argv)?,
        Command::Compare(a) => cmd_compare(a.train.merge(&file.compare), argv)?,
        Command::Count(a) => cmd_count(a.train.merge(&file.count), argv)?,
    };
    if let Some(p) = &cli.config {
        manifest.0.inputs.push(p.clone());
    }
    manifest.0.wall_seconds = started.elapsed().as_secs_f64();
    manifest.0.write(&manifest.1)
}

type Pending = (RunManifest, PathBuf);

fn cmd_bank(a: BankArgs, argv: &[String]) -> Result<Pending> {
    let out = need(&a.out, "bank", "--out")?;
    let seed = a.seed.unwrap_or(0);
    let bank = procedural_bank(a.classes.unwrap_or(4), a.per_class.unwrap_or(20), a.rate.unwrap_or(44100), seed)?;
    let written = write_event_bank(&out, &bank)?;
    println!("wrote {} examples in {} classes to {}", written.len(), bank.len(), out.display());
    let mut m = RunManifest::new("bank", argv, &a);
    m.seeds.insert("bank".into(), seed);
    m.outputs = written;
    Ok((m, out.join(RUN_MANIFEST_FILE)))
}

fn cmd_synth(a: SynthArgs, argv: &[String]) -> Result<Pending> {
    let bank_dir = need(&a.bank, "synth", "--bank")?;
    let out = need(&a.out, "synth", "--out")?;
    let polyphony = need(&a.polyphony, "synth", "--polyphony")?;
    if ![1, 3, 6].contains(&polyphony) {
        return Err(Error::Usage(format!("--polyphony must be 1, 3 or 6, got {polyphony}")));
    }
    let n = need(&a.n, "synth", "--n")?;
    let n_test = a.n_test.unwrap_or((n / 5).max(1));
    let seed = a.seed.unwrap_or(0);
    let split_ratio = a.split_ratio.unwrap_or(0.8);
    let bank = read_event_bank(&bank_dir)?;
    let rate = bank
        .values()
        .flatten()
        .next()
        .map(|c| c.sample_rate())
        .ok_or_else(|| Error::format(&bank_dir, "bank has no examples"))?;
    let (train_bank, test_bank) = split_bank(&bank, split_ratio, seed)?;
    let spec = DatasetSpec {
        synth: SynthConfig {
            duration: a.duration.unwrap_or(30.0),
            sample_rate: rate,
            max_polyphony: polyphony,
            n_recordings: n,
            seed,
            ..SynthConfig::default()
        },
        n_test,
        split_ratio,
    };
    let manifest = synth_dataset(&train_bank, &test_bank, &spec, &out)?;
    let worst = manifest.recordings.iter().map(|r| r.max_overlap).max().unwrap_or(0);
    println!(
        "wrote {} train and {} test recordings to {} (max overlap {worst})",
        n,
        n_test,
        out.display()
    );
    let mut m = RunManifest::new("synth", argv, &a);
    m.config = serde_json::json!({ "args": &a, "synth": &spec.synth, "n_test": n_test, "split_ratio": split_ratio });
    m.seeds.insert("synth".into(), seed);
    m.inputs.push(bank_dir);
    m.outputs.push(out.join(MANIFEST_FILE));
    Ok((m, out.join(RUN_MANIFEST_FILE)))
}

fn cmd_features(a: FeaturesArgs, argv: &[String]) -> Result<Pending> {
    let data = need(&a.data, "features", "--data")?;
    let out = need(&a.out, "features", "--out")?;
    let format: AudioFormat = need(&a.format, "features", "--format")?.parse()?;
    let kinds = parse_kinds(a.kinds.as_deref().unwrap_or("mbe"))?;
    let cfg = FeatureConfig::default();
    let set = extract_features(&data, format, &kinds, &out, &cfg)?;
    for k in &set.kinds {
        let depth = match k {
            polysed_core::FeatureKind::Mbe => set.channels,
            polysed_core::FeatureKind::Gcc => 3 * set.channels * (set.channels - 1) / 2,
        };
        println!("{}: {} recordings, {} bins x depth {}", k.name(), set.recordings.len(), k.bins(), depth);
    }
    let mut m = RunManifest::new("features", argv, &a);
    m.config = serde_json::json!({ "args": &a, "features": &cfg });
    m.inputs.push(data);
    m.outputs.push(out.join(FEATURES_FILE));
    Ok((m, out.join(RUN_MANIFEST_FILE)))
}

fn progress(r: &polysed_core::train::EpochRecord) {
    eprintln!("epoch {:4}  loss {:.5}  er {:.4}  f {:.2}", r.epoch, r.loss, r.er, r.f);
}

fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<Pending> {
    let features = need(&a.features, "train", "--features")?;
    let out = need(&a.out, "train", "--out")?;
    let opts = a.options()?;
    let mut cb = progress;
    let artifacts = run_training(&features, &opts, Some(&mut cb))?;
    let outputs = write_training(&out, &artifacts)?;
    let log = &artifacts.log;
    println!(
        "best epoch {} of {}: er {:.4} f {:.2}; {} {} er {:.4} f {:.2}",
        log.best_epoch,
        log.epochs.len(),
        log.best_er,
        log.best_f,
        artifacts.metrics.split.name(),
        "metrics",
        artifacts.metrics.er,
        artifacts.metrics.f
    );
    let mut m = RunManifest::new("train", argv, &a);
    m.config = serde_json::json!({ "args": &a, "model": &artifacts.checkpoint.meta.model, "train": &artifacts.checkpoint.meta.train });
    m.seeds.insert("model".into(), opts.seed);
    m.seeds.insert("train".into(), opts.seed);
    m.inputs.push(features);
    m.outputs = outputs;
    Ok((m, out.join(RUN_MANIFEST_FILE)))
}

fn cmd_eval(a: EvalArgs, argv: &[String]) -> Result<Pending> {
    let ckpt_path = need(&a.checkpoint, "eval", "--checkpoint")?;
    let features = need(&a.features, "eval", "--features")?;
    let out = need(&a.out, "eval", "--out")?;
    let split: Split = a.split.as_deref().unwrap_or("test").parse()?;
    let ckpt = read_checkpoint(&ckpt_path)?;
    let report = evaluate_checkpoint(&ckpt, &features, split)?;
    write_json(&out, &report)?;
    println!("{} split: er {:.4} f {:.2}", split.name(), report.er, report.f);
    let mut m = RunManifest::new("eval", argv, &a);
    m.inputs = vec![ckpt_path, features];
    m.outputs.push(out.clone());
    Ok((m, manifest_path_for_file(&out)))
}

fn cmd_compare(a: TrainArgs, argv: &[String]) -> Result<Pending> {
    let features = need(&a.features, "compare", "--features")?;
    let out = need(&a.out, "compare", "--out")?;
    let mut opts = a.options()?;
    opts.task = Task::Sed;
    // Early stopping is off in comparisons; patience only has to be valid.
    opts.patience = opts.patience.min(opts.epochs.saturating_sub(1)).max(1);
    let set = load_feature_set(&features)?;
    let kinds = opts.use_kinds.clone().unwrap_or_else(|| set.kinds.clone());
    let base = comparison_config(&set, opts.preset, &kinds)?;
    let n = parity(&base)?;
    println!("parameter parity: c3rnn {n} = crnn {n}");
    let prepared = prepare(&features, Some(&kinds), opts.monitor == Split::Test)?;
    let cmp = run_compare(&prepared, &base, &opts)?;
    let curves = out.join("curves.csv");
    write_file(&curves, cmp.curves_csv())?;
    let logs = out.join("comparison.json");
    write_json(
        &logs,
        &serde_json::json!({ "param_count": cmp.param_count, "c3rnn": &cmp.c3rnn, "crnn": &cmp.crnn }),
    )?;
    println!(
        "best er: c3rnn {:.4} at epoch {}, crnn {:.4} at epoch {}",
        cmp.c3rnn.best_er, cmp.c3rnn.best_epoch, cmp.crnn.best_er, cmp.crnn.best_epoch
    );
    let mut m = RunManifest::new("compare", argv, &a);
    m.config = serde_json::json!({ "args": &a, "model": &base, "train": opts.train_config() });
    m.seeds.insert("model".into(), opts.seed);
    m.seeds.insert("train".into(), opts.seed);
    m.inputs.push(features);
    m.outputs = vec![curves, logs];
    Ok((m, out.join(RUN_MANIFEST_FILE)))
}

fn cmd_count(a: TrainArgs, argv: &[String]) -> Result<Pending> {
    let features = need(&a.features, "count", "--features")?;
    let out = need(&a.out, "count", "--out")?;
    let mut opts = a.options()?;
    opts.task = Task::Count;
    let set = load_feature_set(&features)?;
    let kinds = opts.use_kinds.clone().unwrap_or_else(|| set.kinds.clone());
    let prepared = prepare(&features, Some(&kinds), opts.monitor == Split::Test)?;
    let summary = run_count(&prepared, &opts)?;
    for r in &summary.results {
        let levels: Vec<String> = r
            .report
            .accuracy
            .per_level
            .iter()
            .map(|l| l.map_or("-".into(), |v| format!("{v:.1}")))
            .collect();
        println!(
            "{}: params {} per-level [{}] average {:.1}",
            r.kind.name(),
            r.param_count,
            levels.join(", "),
            r.report.accuracy.average
        );
    }
    let path = out.join("count_report.json");
    write_json(&path, &summary)?;
    let mut m = RunManifest::new("count", argv, &a);
    m.seeds.insert("model".into(), opts.seed);
    m.seeds.insert("train".into(), opts.seed);
    m.inputs.push(features);
    m.outputs.push(path);
    Ok((m, out.join(RUN_MANIFEST_FILE)))
}
