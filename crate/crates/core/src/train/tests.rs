use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::audio::EventRoll;
use crate::features::FeatureTensor;
use crate::model::Preset;

fn classes(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Recordings whose mbe bins light up where a class is active.
fn toy(n: usize, frames: usize, seed: u64, with_gcc: bool) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut act = vec![0u8; frames * 2];
            let mut counts = vec![0usize; frames];
            for c in 0..2 {
                let on = rng.gen_range(0..frames / 2);
                let off = rng.gen_range(on + 1..=frames);
                for t in on..off {
                    act[t * 2 + c] = 1;
                    counts[t] += 1;
                }
            }
            let mut mbe = FeatureTensor::zeros(FeatureKind::Mbe, 0.02, classes(2), frames, 40);
            for t in 0..frames {
                for b in 0..40 {
                    let c = b / 20;
                    let v = act[t * 2 + c] as f64 * 2.0 - 1.0 + rng.gen_range(-0.3..0.3);
                    for d in 0..2 {
                        mbe.set(t, b, d, v);
                    }
                }
            }
            let gcc = with_gcc.then(|| {
                let mut g = FeatureTensor::zeros(FeatureKind::Gcc, 0.02, classes(3), frames, 60);
                g.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                g
            });
            let roll = EventRoll::from_activity(act, frames, 0.02, classes(2)).unwrap();
            Example::new(alloc::format!("r{i}"), Some(mbe), gcc, roll, counts).unwrap()
        })
        .collect()
}

fn tiny_model(task: Task, use_gcc: bool) -> ModelConfig {
    let mut c = ModelConfig::preset(Preset::O1, Arch::C3rnn, 2, 2, use_gcc);
    c.p = 4;
    c.r = 4;
    c.q = 4;
    c.dropout = 0.0;
    c.seq_len = 16;
    c.task = task;
    if task == Task::Count {
        c.n_classes = 3;
    }
    c
}

fn tiny_train(task: Task, epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs - 1,
        batch_size: 4,
        seq_len: 16,
        lr: 3e-3,
        task,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn windows_cover_recording() {
    let ex = toy(1, 49, 0, false);
    let w = windows(&ex, 16);
    assert_eq!(w.len(), 4);
    assert_eq!(w[3], Window { example: 0, start: 48, len: 1 });
    let b = assemble::<f64>(&ex, &w, 16).unwrap();
    assert_eq!(b.lengths, [16, 16, 16, 1]);
    // Frame t of window k is recording frame 16k + t.
    let m = b.mbe.unwrap();
    for (k, t) in [(1usize, 3usize), (2, 15), (3, 0)] {
        let src = ex[0].mbe.as_ref().unwrap().frame(16 * k + t);
        let dst = &m.data()[(k * 16 + t) * 80..(k * 16 + t + 1) * 80];
        assert_eq!(src, dst);
        assert_eq!(b.roll.data()[(k * 16 + t) * 2], ex[0].roll.row(16 * k + t)[0] as f64);
    }
    assert!(m.data()[(3 * 16 + 1) * 80..].iter().all(|&v| v == 0.0));
    assert_eq!(b.valid.iter().filter(|v| **v).count(), 49);
}

#[test]
fn batches_are_seeded() {
    let ex = toy(3, 40, 0, false);
    let a = make_batches(&ex, 16, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = make_batches(&ex, 16, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let c = make_batches(&ex, 16, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.iter().map(Vec::len).sum::<usize>(), 9);
    assert!(make_batches(&[], 16, 2, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn early_stopping_follows_patience_exactly() {
    // Improves at epochs 1, 2, 4 then never again.
    let script = [0.9, 0.8, 0.85, 0.7, 0.7, 0.75, 0.71, 0.9, 0.72, 0.8];
    let mut s = EarlyStopping::new(3);
    let mut stopped = None;
    for (i, &er) in script.iter().enumerate() {
        if s.update(i + 1, er) == Verdict::Stop {
            stopped = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped, Some(4 + 3));
    assert_eq!(s.best_epoch, 4);
    assert_eq!(s.best, 0.7);

    let mut s = EarlyStopping::new(100);
    assert_eq!(s.update(1, 0.5), Verdict::Improved);
    for e in 2..101 {
        assert_eq!(s.update(e, 0.6), Verdict::Continue);
    }
    assert_eq!(s.update(101, 0.6), Verdict::Stop);
}

#[test]
fn threshold_boundary_and_monotonicity() {
    let tmpl = EventRoll::zeros(2, 0.02, classes(2)).unwrap();
    let r = threshold_roll(&[0.5, 0.49, 0.51, 0.0], &tmpl, 0.5).unwrap();
    assert_eq!(r.activity(), &[1, 0, 1, 0]);
    let r = threshold_roll(&[0.49; 4], &tmpl, 0.5).unwrap();
    assert!(r.activity().iter().all(|&a| a == 0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
    let lo = threshold_roll(&p, &tmpl, 0.3).unwrap();
    let hi = threshold_roll(&p, &tmpl, 0.6).unwrap();
    assert!(lo.activity().iter().zip(hi.activity()).all(|(a, b)| a >= b));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig { patience: 1000, ..TrainConfig::default() };
    assert!(bad.validate().is_err());
    let bad = TrainConfig { threshold: 1.0, ..TrainConfig::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn training_learns_restores_best_and_replays() {
    let data = toy(4, 40, 1, false);
    let cfg = tiny_train(Task::Sed, 25);
    let mut model = Model::<f64>::build(&tiny_model(Task::Sed, false), 3).unwrap();
    let untrained = evaluate(&mut model, &data, 16, 0.5, 1.0).unwrap();
    let out = train(&mut model, &data, &data, &cfg, &mut Hooks::default()).unwrap();
    let log = &out.log;
    assert_eq!(log.best_er, log.epochs.iter().map(|e| e.er).fold(f64::INFINITY, f64::min));
    let after = evaluate(&mut model, &data, 16, 0.5, 1.0).unwrap();
    assert_eq!(after.er, log.best_er);
    assert!(after.er < untrained.er, "{} vs {}", after.er, untrained.er);
    assert!(log.epochs.last().unwrap().loss < log.epochs[0].loss);

    let mut again = Model::<f64>::build(&tiny_model(Task::Sed, false), 3).unwrap();
    let out2 = train(&mut again, &data, &data, &cfg, &mut Hooks::default()).unwrap();
    assert_eq!(out.log.without_timing(), out2.log.without_timing());
    assert_eq!(out.optimizer, out2.optimizer);
    assert_eq!(out.rng_word_pos, out2.rng_word_pos);
}

#[test]
fn patience_stops_run() {
    let data = toy(2, 20, 1, false);
    let cfg = TrainConfig { max_epochs: 50, patience: 2, ..tiny_train(Task::Sed, 50) };
    let mut model = Model::<f64>::build(&tiny_model(Task::Sed, false), 3).unwrap();
    let log = train(&mut model, &data, &data, &cfg, &mut Hooks::default()).unwrap().log;
    if log.stop == StopReason::Patience {
        assert_eq!(log.epochs.len(), log.best_epoch + 2);
    } else {
        assert_eq!(log.epochs.len(), 50);
    }
    let csv = log.to_csv();
    assert!(csv.starts_with("epoch,loss,er,f,seconds\n"));
    assert_eq!(csv.lines().count(), log.epochs.len() + 1);
}

#[test]
fn hooks_see_every_epoch() {
    let data = toy(2, 20, 1, false);
    let cfg = tiny_train(Task::Sed, 3);
    let mut model = Model::<f32>::build(&tiny_model(Task::Sed, false), 3).unwrap();
    let mut seen = Vec::new();
    let mut cb = |e: &EpochRecord| seen.push(e.epoch);
    let clock = || 1.5;
    let mut hooks = Hooks { clock: Some(&clock), on_epoch: Some(&mut cb) };
    let log = train(&mut model, &data, &data, &cfg, &mut hooks).unwrap().log;
    assert_eq!(seen, [1, 2, 3]);
    assert!(log.epochs.iter().all(|e| e.seconds == 0.0));
}

#[test]
fn padded_frames_contribute_nothing() {
    // One 10-frame recording trained as a single padded 16-frame window
    // versus an exact 10-frame window.
    let data = toy(1, 10, 4, false);
    let mc = tiny_model(Task::Sed, false);
    let mut grads = Vec::new();
    for seq in [16usize, 10] {
        let mut m = Model::<f64>::build(&mc, 1).unwrap();
        let w = windows(&data, seq);
        let b = assemble::<f64>(&data, &w, seq).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx { mode: Mode::Train, rng: &mut rng, lengths: Some(&b.lengths) };
        let p = m.forward(b.mbe.as_ref(), None, &mut ctx).unwrap();
        let loss = loss_bce(&p, &b.roll, Some(&b.valid)).unwrap();
        m.backward(&bce_logit_grad(&p, &b.roll, Some(&b.valid)).unwrap());
        let g: Vec<f64> = m.params_mut().iter().flat_map(|(_, p)| p.grad.data().to_vec()).collect();
        grads.push((loss, g));
    }
    assert!((grads[0].0 - grads[1].0).abs() < 1e-12);
    for (a, b) in grads[0].1.iter().zip(&grads[1].1) {
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-3), "{a} vs {b}");
    }
}

#[test]
fn count_experiment_runs_per_kind() {
    let data = toy(3, 32, 2, true);
    let cfg = tiny_train(Task::Count, 3);
    let res = run_count_experiment::<f64>(
        &data,
        &data,
        &tiny_model(Task::Count, true),
        &cfg,
        &[FeatureKind::Mbe, FeatureKind::Gcc],
        1,
        &mut Hooks::default(),
    )
    .unwrap();
    assert_eq!(res.len(), 2);
    assert!(res[0].param_count != res[1].param_count);
    for r in &res {
        assert_eq!(r.report.accuracy.per_level.len(), 3);
        assert_eq!(r.log.epochs.len(), 3);
    }
}

#[test]
fn comparison_shares_epoch_grid() {
    let data = toy(2, 32, 2, false);
    let cfg = TrainConfig { max_epochs: 4, patience: 1, ..tiny_train(Task::Sed, 4) };
    let cmp = compare_architectures::<f64>(&data, &data, &tiny_model(Task::Sed, false), &cfg, 1, &mut Hooks::default())
        .unwrap();
    let grid = |l: &TrainLog| l.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>();
    assert_eq!(grid(&cmp.c3rnn), grid(&cmp.crnn));
    assert_eq!(grid(&cmp.c3rnn), [1, 2, 3, 4]);
    let csv = cmp.curves_csv();
    assert!(csv.starts_with("epoch,arch,loss,er,f\n"));
    assert_eq!(csv.lines().count(), 9);
}
