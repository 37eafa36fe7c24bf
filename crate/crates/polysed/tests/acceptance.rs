//! End-to-end acceptance checks. Each test prints one line of the form
//! `criterion N PASS|FAIL: ...` to stderr, bypassing the capture of the test
//! harness, and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use polysed::bank::{read_event_bank, write_event_bank};
use polysed::dataset::{synth_dataset, AudioFormat, DatasetSpec, Split};
use polysed::pipeline::{evaluate_checkpoint, extract_features, run_training, write_training, MetricsReport, TrainOptions};
use polysed_core::audio::{source_counts, AudioClip, EventInstance, EventRoll};
use polysed_core::features::{
    frame_count, gcc_multires, gcc_phat_pair, lag_of_index, log_mbe, FeatureConfig, FeatureKind, GCC_LAGS,
};
use polysed_core::metrics::{error_rate, f_score, segment_counts};
use polysed_core::model::{Arch, Model, ModelConfig, Preset, Task};
use polysed_core::nn::gradcheck::{finite_diff_check, random_binary, random_tensor, LayerProbe, LossKind, LossProbe};
use polysed_core::nn::{loss_cce, softmax_rows, BatchNorm, BiGru, Conv2d, Conv3d, Ctx, Dense, Layer, Mode, Tensor};
use polysed_core::synth::{
    binauralize_raw, encode_foa_raw, procedural_bank, recording_rng, sample_scene, split_bank, SceneEvent, SceneSpec,
    SynthConfig,
};
use polysed_core::train::TrainLog;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, what: &str, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {verdict}: {what} ({detail})");
    assert!(pass, "criterion {n} failed: {what} ({detail})");
}

// ---------------------------------------------------------------- 1

const METRIC_PAIRS: usize = 1000;
const METRIC_BUDGET: Duration = Duration::from_secs(10);

#[derive(Debug, Default, PartialEq)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    s: usize,
    d: usize,
    i: usize,
    n: usize,
}

/// Per (segment, class) enumeration with integer millisecond frame times.
fn oracle(r: &[u8], p: &[u8], t: usize, c: usize, hop_ms: usize) -> Vec<Tally> {
    let n_seg = if t == 0 { 0 } else { ((t - 1) * hop_ms) / 1000 + 1 };
    (0..n_seg)
        .map(|k| {
            let mut tally = Tally::default();
            for class in 0..c {
                let frames = (0..t).filter(|f| f * hop_ms / 1000 == k);
                let (mut ra, mut pa) = (false, false);
                for f in frames {
                    ra |= r[f * c + class] == 1;
                    pa |= p[f * c + class] == 1;
                }
                tally.tp += (ra && pa) as usize;
                tally.fp += (!ra && pa) as usize;
                tally.fn_ += (ra && !pa) as usize;
                tally.n += ra as usize;
            }
            tally.s = tally.fp.min(tally.fn_);
            tally.d = tally.fn_ - tally.s;
            tally.i = tally.fp - tally.s;
            tally
        })
        .collect()
}

#[test]
fn c01_metric_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut identity_violations = 0;
    for _ in 0..METRIC_PAIRS {
        let t = rng.gen_range(0..=200);
        let c = rng.gen_range(1..=4);
        let hop_ms = [10, 20, 25, 40, 50, 100][rng.gen_range(0..6)];
        let density = rng.gen_range(0.0..1.0);
        let mut draw = || (0..t * c).map(|_| rng.gen_bool(density) as u8).collect::<Vec<u8>>();
        let (r, p) = (draw(), draw());
        let names: Vec<String> = (0..c).map(|i| format!("k{i}")).collect();
        let hop = hop_ms as f64 / 1000.0;
        let ref_roll = EventRoll::from_activity(r.clone(), t, hop, names.clone()).unwrap();
        let pred_roll = EventRoll::from_activity(p.clone(), t, hop, names).unwrap();
        let scores = segment_counts(&ref_roll, &pred_roll, 1.0).unwrap();
        let expect = oracle(&r, &p, t, c, hop_ms);

        let got: Vec<Tally> = scores
            .segments
            .iter()
            .map(|s| Tally { tp: s.tp, fp: s.fp, fn_: s.fn_, s: s.subs, d: s.dele, i: s.ins, n: s.n })
            .collect();
        identity_violations += got.iter().filter(|g| g.s + g.d + g.i != g.fp.max(g.fn_)).count();

        let sum = |f: fn(&Tally) -> usize| expect.iter().map(f).sum::<usize>();
        let (tp, fp, fn_, n) = (sum(|x| x.tp), sum(|x| x.fp), sum(|x| x.fn_), sum(|x| x.n));
        let errors = sum(|x| x.s) + sum(|x| x.d) + sum(|x| x.i);
        let f_expect = if 2 * tp + fp + fn_ == 0 { 100.0 } else { (200 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        let er_expect = if n == 0 { sum(|x| x.i) as f64 } else { errors as f64 / n as f64 };
        if got != expect || f_score(&scores) != f_expect || error_rate(&scores) != er_expect {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        mismatches == 0 && identity_violations == 0 && elapsed < METRIC_BUDGET,
        "segment metrics match a brute-force oracle",
        format!(
            "{METRIC_PAIRS} pairs, {mismatches} mismatches, {identity_violations} identity violations, {:.2}s of {}s",
            elapsed.as_secs_f64(),
            METRIC_BUDGET.as_secs()
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_worked_metric_case() {
    let names: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let t = 50;
    let mut r = EventRoll::zeros(t, 0.02, names.clone()).unwrap();
    let mut p = EventRoll::zeros(t, 0.02, names).unwrap();
    for f in 0..t {
        r.set(f, 0, true);
        r.set(f, 1, true);
        p.set(f, 0, true);
        p.set(f, 2, true);
    }
    let s = segment_counts(&r, &p, 1.0).unwrap();
    let (er, f) = (error_rate(&s), f_score(&s));
    let k = &s.segments[0];
    let tallies = (k.tp, k.fp, k.fn_, k.subs, k.dele, k.ins, k.n);
    report(
        2,
        s.segments.len() == 1 && tallies == (1, 1, 1, 1, 0, 0, 2) && er == 0.5 && f == 50.0,
        "{A,B} against {A,C} in one segment",
        format!("ER {er}, F {f}, (TP,FP,FN,S,D,I,N) = {tallies:?}"),
    );
}

// ---------------------------------------------------------------- 3

const GCC_BUDGET: Duration = Duration::from_secs(30);
const GCC_SCALE_TOL: f64 = 1e-9;

/// Channel 1 is channel 2 delayed by `d` samples.
fn delayed_pair(d: i32, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = 64usize;
    let base: Vec<f64> = (0..n + 2 * pad).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let x2 = base[pad..pad + n].to_vec();
    let x1 = (0..n).map(|i| base[(pad as i32 + i as i32 - d) as usize]).collect();
    (x1, x2)
}

fn peak_lag(row: &[f64; GCC_LAGS]) -> i32 {
    let j = (0..GCC_LAGS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    lag_of_index(j)
}

#[test]
fn c03_gcc_phat_lag_recovery() {
    let start = Instant::now();
    let cfg = FeatureConfig::default();
    let rate = 44100;
    let n = rate as usize / 2;
    let mut recovered = 0;
    let mut worst_scale = 0.0f64;
    for d in -29..=30 {
        let (x1, x2) = delayed_pair(d, n, (100 + d) as u64);
        let mut ok = true;
        for &res in &cfg.gcc_resolutions_ms {
            let rows = gcc_phat_pair(&x1, &x2, rate, res, &cfg).unwrap();
            ok &= peak_lag(&rows[rows.len() / 2]) == d;
            let a: Vec<f64> = x1.iter().map(|v| v * 0.013).collect();
            let b: Vec<f64> = x2.iter().map(|v| v * 41.0).collect();
            let scaled = gcc_phat_pair(&a, &b, rate, res, &cfg).unwrap();
            for (r, s) in rows.iter().zip(&scaled) {
                for (u, v) in r.iter().zip(s) {
                    worst_scale = worst_scale.max((u - v).abs());
                }
            }
        }
        recovered += ok as usize;
    }
    let elapsed = start.elapsed();
    report(
        3,
        recovered == 60 && worst_scale <= GCC_SCALE_TOL && elapsed < GCC_BUDGET,
        "GCC-PHAT recovers every lag in [-29, 30] and ignores channel gain",
        format!(
            "{recovered}/60 lags at all {} resolutions, max scale deviation {worst_scale:.1e} <= {GCC_SCALE_TOL:.0e}, {:.1}s of {}s",
            cfg.gcc_resolutions_ms.len(),
            elapsed.as_secs_f64(),
            GCC_BUDGET.as_secs()
        ),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_feature_shapes() {
    let cfg = FeatureConfig::default();
    let rate = 44100;
    let n = 66150;
    let t = frame_count(n, cfg.window_samples(rate), cfg.hop_samples(rate));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut got = Vec::new();
    let mut pass = t > 0;
    for (channels, gcc_depth) in [(1, None), (2, Some(3)), (4, Some(18))] {
        let data = (0..channels).map(|_| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        let clip = AudioClip::new(data, rate).unwrap();
        let mbe = log_mbe(&clip, &cfg).unwrap().shape();
        pass &= mbe == (t, 40, channels);
        got.push(format!("{mbe:?}"));
        match gcc_depth {
            Some(depth) => {
                let gcc = gcc_multires(&clip, &cfg).unwrap().shape();
                pass &= gcc == (t, 60, depth);
                got.push(format!("{gcc:?}"));
            }
            None => pass &= gcc_multires(&clip, &cfg).is_err(),
        }
    }
    report(4, pass, "mono/bin/foa feature shapes", format!("T = {t}: {}", got.join(" ")));
}

// ---------------------------------------------------------------- 5

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

#[test]
fn c05_gradient_checks() {
    let start = Instant::now();
    let rng = |s| ChaCha8Rng::seed_from_u64(s);
    let mut results: Vec<(&str, f64)> = Vec::new();

    let conv2 = Conv2d::<f64>::new(3, 4, 3, 3, &mut rng(1)).unwrap();
    results.push(("conv2d", finite_diff_check(&mut LayerProbe::new(conv2, random_tensor(&[2, 4, 5, 3], 2), Mode::Train, 3), 400, 4)));

    let conv3 = Conv3d::<f64>::new(2, 3, 3, 3, &mut rng(5)).unwrap();
    results.push(("conv3d", finite_diff_check(&mut LayerProbe::new(conv3, random_tensor(&[1, 4, 5, 4], 6), Mode::Train, 7), 400, 4)));

    let mut bn = BatchNorm::<f64>::new(3);
    bn.gamma.value = Tensor::from_f64(&[3], &[0.7, 1.3, -0.4]).unwrap();
    bn.beta.value = Tensor::from_f64(&[3], &[0.1, 0.0, -0.2]).unwrap();
    results.push(("batch norm", finite_diff_check(&mut LayerProbe::new(bn, random_tensor(&[2, 4, 2, 3], 2), Mode::Train, 3), 200, 4)));

    let gru = BiGru::<f64>::new(3, 4, &mut rng(1)).unwrap();
    results.push(("bigru", finite_diff_check(&mut LayerProbe::new(gru, random_tensor(&[2, 8, 3], 2), Mode::Train, 3), 400, 4)));

    let dense = Dense::<f64>::new(5, 4, &mut rng(1)).unwrap();
    results.push(("dense", finite_diff_check(&mut LayerProbe::new(dense, random_tensor(&[2, 3, 5], 2), Mode::Train, 3), 200, 4)));

    let mut bce = LossProbe { logits: random_tensor(&[6, 4], 1), kind: LossKind::Bce(random_binary(&[6, 4], 2)), valid: None };
    results.push(("bce", finite_diff_check(&mut bce, 24, 3)));

    let mut cce = LossProbe { logits: random_tensor(&[5, 7], 1), kind: LossKind::Cce(vec![0, 6, 3, 3, 1]), valid: None };
    results.push(("cce", finite_diff_check(&mut cce, 35, 3)));

    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    report(
        5,
        worst < GRAD_TOL && elapsed < GRAD_BUDGET,
        "central-difference gradient checks in f64",
        format!("{}; tol {GRAD_TOL:.0e}, {:.1}s", detail.join(", "), elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_architecture_parity() {
    let mut lines = Vec::new();
    let mut pass = true;
    for preset in Preset::ALL {
        for channels in [2, 4] {
            for use_gcc in [false, true] {
                let cfg = ModelConfig::preset(preset, Arch::C3rnn, channels, 6, use_gcc);
                let a = Model::<f64>::build_c3rnn(&cfg, 0).unwrap().param_count();
                let b = Model::<f64>::build_crnn(&cfg, 0).unwrap().param_count();
                pass &= a == b;
                if !use_gcc {
                    lines.push(format!("{preset:?}/C{channels} {a}={b}"));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut c2 = Conv2d::<f64>::new(1, 5, 3, 3, &mut rng).unwrap();
    let mut c3 = Conv3d::<f64>::new(1, 5, 3, 3, &mut rng).unwrap();
    c3.weight.value = c2.weight.value.clone();
    c2.bias.value = random_tensor(&[5], 7);
    c3.bias.value = c2.bias.value.clone();
    let x = random_tensor(&[2, 7, 6, 1], 8);
    let mut ctx = Ctx { mode: Mode::Eval, rng: &mut rng, lengths: None };
    let y2 = c2.forward(&x, &mut ctx).unwrap();
    let y3 = c3.forward(&x, &mut ctx).unwrap();
    let bitwise = y2.data().iter().zip(y3.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    report(
        6,
        pass && bitwise,
        "c3rnn and crnn parameter parity; depth-1 conv3d equals conv2d",
        format!("{}; conv3d bitwise {bitwise}", lines.join(", ")),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_spatial_encoding_invariants() {
    let rate = 16000;
    let bank = procedural_bank(4, 6, rate, 7).unwrap();
    let (label, clips) = bank.iter().next().unwrap();
    let clip_len = clips[0].n_frames();
    let centered = SceneSpec {
        duration: 2.0 * clip_len as f64 / rate as f64,
        sample_rate: rate,
        max_polyphony: 1,
        events: vec![SceneEvent {
            instance: EventInstance::new(label.clone(), 0.1, 0.1 + clip_len as f64 / rate as f64),
            example: 0,
            onset_sample: 1600,
            n_samples: clip_len,
        }],
    };
    let foa = encode_foa_raw(&centered, &bank).unwrap();
    let centered_ok = foa.channel(1) == foa.channel(0)
        && foa.channel(2).iter().all(|&v| v == 0.0)
        && foa.channel(3).iter().all(|&v| v == 0.0)
        && foa.channel(0).iter().any(|&v| v != 0.0);

    let cfg = SynthConfig { duration: 8.0, sample_rate: rate, max_polyphony: 3, n_recordings: 50, ..SynthConfig::default() };
    let mut swaps = 0;
    let mut worst = 0;
    for i in 0..50u64 {
        let scene = sample_scene(&bank, &cfg, &mut recording_rng(7, 0, i)).unwrap();
        worst = worst.max(sweep_polyphony(&scene));
        if i < 10 {
            let mut mirror = scene.clone();
            for e in &mut mirror.events {
                if e.instance.azimuth != -180.0 {
                    e.instance.azimuth = -e.instance.azimuth;
                }
            }
            let a = binauralize_raw(&scene, &bank).unwrap();
            let b = binauralize_raw(&mirror, &bank).unwrap();
            swaps += (a.channel(0) == b.channel(1) && a.channel(1) == b.channel(0)) as usize;
        }
    }
    report(
        7,
        centered_ok && swaps == 10 && worst <= 3,
        "FOA centre source, binaural mirror swap, O3 polyphony bound",
        format!("X=W and Y=Z=0: {centered_ok}; mirrored scenes swapped {swaps}/10; max overlap {worst} over 50 scenes"),
    );
}

/// Largest number of events sounding at once, from sample-level boundaries.
fn sweep_polyphony(scene: &SceneSpec) -> usize {
    let mut edges: Vec<(usize, i32)> = scene
        .events
        .iter()
        .flat_map(|e| [(e.onset_sample, 1), (e.onset_sample + e.n_samples, -1)])
        .collect();
    edges.sort_by_key(|&(t, delta)| (t, delta));
    let (mut now, mut best) = (0i32, 0i32);
    for (_, delta) in edges {
        now += delta;
        best = best.max(now);
    }
    best as usize
}

// ---------------------------------------------------------------- 8 and 9

const OVERFIT_MAX_ER: f64 = 0.2;
const OVERFIT_MIN_F: f64 = 80.0;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_PATIENCE: usize = 100;

struct Overfit {
    log: TrainLog,
    metrics: MetricsReport,
    files: Vec<(String, Vec<u8>)>,
    reevaluated: MetricsReport,
    seconds: f64,
}

fn overfit_run() -> Overfit {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bank_dir = root.join("bank");
    write_event_bank(&bank_dir, &procedural_bank(4, 10, 44100, 0).unwrap()).unwrap();
    let (train_bank, test_bank) = split_bank(&read_event_bank(&bank_dir).unwrap(), 0.8, 0).unwrap();
    let spec = DatasetSpec {
        synth: SynthConfig { duration: 5.0, sample_rate: 44100, max_polyphony: 1, n_recordings: 10, seed: 0, ..SynthConfig::default() },
        n_test: 2,
        split_ratio: 0.8,
    };
    let data = root.join("data");
    synth_dataset(&train_bank, &test_bank, &spec, &data).unwrap();
    let feats = root.join("feats");
    extract_features(&data, AudioFormat::Foa, &[FeatureKind::Mbe], &feats, &FeatureConfig::default()).unwrap();

    let mut opts = TrainOptions::new(Preset::O1, Arch::C3rnn, Task::Sed, 3);
    opts.epochs = OVERFIT_EPOCHS;
    opts.patience = OVERFIT_PATIENCE;
    opts.lr = 1e-3;
    opts.batch_size = Some(4);
    opts.monitor = Split::Train;
    opts.timing = false;
    let artifacts = run_training(&feats, &opts, None).unwrap();
    let out = root.join("run");
    let written = write_training(&out, &artifacts).unwrap();
    let files = written
        .iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
        .collect();
    let reevaluated = evaluate_checkpoint(&artifacts.checkpoint, &feats, Split::Train).unwrap();
    Overfit { log: artifacts.log, metrics: artifacts.metrics, files, reevaluated, seconds: start.elapsed().as_secs_f64() }
}

fn first_overfit() -> &'static Overfit {
    static RUN: OnceLock<Overfit> = OnceLock::new();
    RUN.get_or_init(overfit_run)
}

#[test]
fn c08_desk_scale_overfit() {
    let run = first_overfit();
    let m = &run.reevaluated;
    report(
        8,
        m.er <= OVERFIT_MAX_ER && m.f >= OVERFIT_MIN_F && m == &run.metrics,
        "C3RNN o1 overfits 10 synthetic O1 recordings",
        format!(
            "train ER {:.4} <= {OVERFIT_MAX_ER}, F {:.2} >= {OVERFIT_MIN_F}, best epoch {} of {}, {:.0}s",
            m.er,
            m.f,
            run.log.best_epoch,
            run.log.epochs.len(),
            run.seconds
        ),
    );
}

#[test]
fn c09_determinism() {
    let first = first_overfit();
    let second = overfit_run();
    let same_log = first.log == second.log
        && serde_json::to_string(&first.log).unwrap() == serde_json::to_string(&second.log).unwrap();
    let same_metrics = serde_json::to_string(&first.metrics).unwrap() == serde_json::to_string(&second.metrics).unwrap();
    let differing: Vec<&str> = first
        .files
        .iter()
        .zip(&second.files)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    report(
        9,
        same_log && same_metrics && differing.is_empty() && first.files.len() == second.files.len(),
        "same seed reproduces the training log and metrics bit for bit",
        format!(
            "log {same_log}, metrics {same_metrics}, {} artifact files compared, differing {differing:?}",
            first.files.len()
        ),
    );
}

// ---------------------------------------------------------------- 10

const SOFTMAX_TOL: f64 = 1e-9;
const CCE_TOL: f64 = 1e-6;

#[test]
fn c10_counting_plumbing() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut logits: Vec<f64> = (0..7 * 500).map(|_| rng.gen_range(-50.0..50.0)).collect();
    softmax_rows(&mut logits, 7);
    let worst_sum = logits.chunks(7).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);

    let uniform = Tensor::from_vec(&[9, 7], vec![1.0 / 7.0; 63]).unwrap();
    let targets: Vec<usize> = (0..9).map(|i| i % 7).collect();
    let cce = loss_cce(&uniform, &targets, None).unwrap();
    let cce_err = (cce - 7f64.ln()).abs();

    let bank = procedural_bank(4, 6, 8000, 10).unwrap();
    let cfg = SynthConfig { duration: 6.0, sample_rate: 8000, max_polyphony: 6, n_recordings: 100, ..SynthConfig::default() };
    let hop = 0.02;
    let t = (cfg.duration / hop) as usize;
    let mut matching = 0;
    for i in 0..100u64 {
        let scene = sample_scene(&bank, &cfg, &mut recording_rng(10, 0, i)).unwrap();
        let events = scene.annotations();
        let got = source_counts(&events, hop, t);
        let brute: Vec<usize> = (0..t)
            .map(|f| {
                let (a, b) = (f as f64 * hop, (f + 1) as f64 * hop);
                events.iter().filter(|e| e.onset < b && e.offset > a).count()
            })
            .collect();
        matching += (got == brute) as usize;
    }
    report(
        10,
        worst_sum <= SOFTMAX_TOL && cce_err <= CCE_TOL && matching == 100,
        "softmax, uniform 7-way cross-entropy, count targets",
        format!(
            "max |row sum - 1| {worst_sum:.1e} <= {SOFTMAX_TOL:.0e}; |CCE - ln 7| {cce_err:.1e} <= {CCE_TOL:.0e}; count targets {matching}/100"
        ),
    );
}

