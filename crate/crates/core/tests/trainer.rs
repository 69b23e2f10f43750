use std::fs;

use hmer::dataset::{synth_corpus, synth_vocab, ExprSample};
use hmer::model::{ModelConfig, TaskFlags};
use hmer::tensor::{Checkpoint, Gradients, ParamStore, Tensor};
use hmer::trainer::{
    fit, learning_rate, load_checkpoint, optimizer_step, total_loss, AdamConfig, AdamState, FitOptions, LossWeights,
    StepRecord, TrainConfig, LAST_CHECKPOINT, LOG_FILE,
};
use hmer::Error;
use proptest::prelude::*;

/// A handful of small synthetic samples at a quarter of the usual size.
fn samples(n: usize) -> Vec<ExprSample> {
    let vocab = synth_vocab();
    synth_corpus(21, n, 1)
        .into_iter()
        .map(|s| {
            let full = ExprSample::synthetic(s, &vocab).unwrap();
            let img = full.image.resize_nearest(16, full.image.width().div_ceil(4).max(8));
            ExprSample::new(img, full.tokens, &vocab).unwrap()
        })
        .collect()
}

fn tiny(tasks: TaskFlags, steps: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(tasks),
        batch_size: 2,
        max_steps: steps,
        eval_every: 0,
        max_decode_len: 8,
        optim: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn runs_are_seed_deterministic() {
    let (vocab, data) = (synth_vocab(), samples(4));
    let cfg = tiny(TaskFlags::MULTI_VIEW, 11);
    let a = fit(&cfg, &vocab, &data, &[], FitOptions::default()).unwrap();
    let b = fit(&cfg, &vocab, &data, &[], FitOptions::default()).unwrap();
    assert_eq!(a.records.len(), 11);
    for i in [0, 10] {
        assert_eq!(a.records[i], b.records[i]);
    }
    assert_eq!(a.store.iter().map(|(_, _, t)| t.clone()).collect::<Vec<_>>(), b.store.iter().map(|(_, _, t)| t.clone()).collect::<Vec<_>>());
    let other = fit(&TrainConfig { seed: 1, ..cfg }, &vocab, &data, &[], FitOptions::default()).unwrap();
    assert_ne!(a.records[0].l_all, other.records[0].l_all);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (vocab, data) = (synth_vocab(), samples(5));
    let cfg = TrainConfig {
        scale_aug: true,
        ..tiny(TaskFlags::MULTI_VIEW_TASK2, 6)
    };
    let whole = fit(&cfg, &vocab, &data, &data[..2], FitOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = fit(
        &cfg,
        &vocab,
        &data,
        &data[..2],
        FitOptions {
            out_dir: Some(dir.path()),
            stop_at: Some(3),
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(first.steps, 3);
    let ck = Checkpoint::<f32>::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    let rest = fit(
        &cfg,
        &vocab,
        &data,
        &data[..2],
        FitOptions {
            out_dir: Some(dir.path()),
            resume: Some(&ck),
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(rest.steps, 6);
    for ((_, name, a), (_, _, b)) in whole.store.iter().zip(rest.store.iter()) {
        assert!(a.data() == b.data(), "{name} differs");
    }
    assert_eq!(whole.adam, rest.adam);
    assert_eq!(whole.records[3..], rest.records[..]);

    let lines = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 6);

    let loaded = load_checkpoint(&Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap()).unwrap();
    assert_eq!(loaded.step, 6);
    assert_eq!(loaded.config, cfg);
    assert_eq!(loaded.vocab, vocab);

    let other = TrainConfig { seed: 9, ..cfg };
    assert!(matches!(
        fit(&other, &vocab, &data, &[], FitOptions { resume: Some(&ck), ..FitOptions::default() }),
        Err(Error::Config(_))
    ));
}

#[test]
fn silenced_counting_leaves_its_heads_untouched() {
    let (vocab, data) = (synth_vocab(), samples(3));
    for tasks in [TaskFlags::TASK1, TaskFlags::MULTI_VIEW] {
        let mut cfg = tiny(tasks, 3);
        cfg.weights.lambda3 = 0.0;
        let start = fit(&TrainConfig { max_steps: 3, ..cfg.clone() }, &vocab, &data, &[], FitOptions { stop_at: Some(0), ..FitOptions::default() }).unwrap();
        let end = fit(&cfg, &vocab, &data, &[], FitOptions::default()).unwrap();
        let mut heads = 0;
        for ((_, name, a), (_, _, b)) in start.store.iter().zip(end.store.iter()) {
            if name.starts_with("mscm.") || name.starts_with("count_head") {
                heads += 1;
                assert!(a.data() == b.data(), "{name} moved under {}", tasks.variant());
            } else if name.starts_with("decoder.symbol_head") {
                assert!(a.data() != b.data());
            }
        }
        assert!(heads > 0, "{}", tasks.variant());
    }
}

#[test]
fn log_replays_to_the_total() {
    let (vocab, data) = (synth_vocab(), samples(4));
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(TaskFlags::MULTI_VIEW_TASK2, 5);
    fit(&cfg, &vocab, &data, &[], FitOptions { out_dir: Some(dir.path()), ..FitOptions::default() }).unwrap();
    let w = cfg.weights;
    for line in fs::read_to_string(dir.path().join(LOG_FILE)).unwrap().lines() {
        let r: StepRecord = serde_json::from_str(line).unwrap();
        let replay = w.lambda1 * (r.l_rec + r.l_rec2) + w.lambda2 * r.l_pos + w.lambda3 * r.l_counting;
        assert!((replay - r.l_all).abs() < 1e-6, "{line}");
        assert!(r.l_counting > 0.0 && r.l_rec2 > 0.0);
    }
}

#[test]
fn adam_solves_a_convex_quadratic() {
    // f(w) = Σ a_i (w_i − c_i)²
    let a = [1.0, 3.0, 0.5, 2.0];
    let c = [0.3, -0.7, 1.2, 0.0];
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::zeros(&[4]));
    let mut state = AdamState::new(&store);
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    let f = |w: &[f64]| w.iter().zip(a).zip(c).map(|((w, a), c)| a * (w - c).powi(2)).sum::<f64>();
    for step in 0..200 {
        let w = store.get(id).data().to_vec();
        let mut g = Gradients::zeros_like(&store);
        g.add(id, &w.iter().zip(a).zip(c).map(|((w, a), c)| 2.0 * a * (w - c)).collect::<Vec<_>>());
        optimizer_step(&mut store, &mut g, &mut state, &cfg, learning_rate(&cfg, step, 200)).unwrap();
    }
    let loss = f(store.get(id).data());
    assert!(loss < 1e-4, "{loss}");
}

#[test]
fn optimizer_rejects_non_finite_gradients() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("layer.w", Tensor::zeros(&[2]));
    let mut g = Gradients::zeros_like(&store);
    g.add(id, &[f64::NAN, 0.0]);
    let mut st = AdamState::new(&store);
    match optimizer_step(&mut store, &mut g, &mut st, &AdamConfig::default(), 0.1) {
        Err(Error::NonFiniteGrad { param, .. }) => assert_eq!(param, "layer.w"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert!((total_loss(1.0, 2.0, 3.0, &w).unwrap() - 2.3).abs() < 1e-9);
    let base = LossWeights { lambda3: 0.0, ..w };
    assert_eq!(total_loss(1.5, 0.8, 123.0, &base).unwrap(), 1.5 + 0.5 * 0.8);
    assert_eq!(w.effective(TaskFlags::BASELINE).lambda3, 0.0);
    assert_eq!(w.effective(TaskFlags::MULTI_VIEW).lambda3, 0.1);
    assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, &w), Err(Error::NonFiniteLoss { .. })));
    assert!(matches!(total_loss(0.0, f64::INFINITY, 0.0, &w), Err(Error::NonFiniteLoss { .. })));
}

proptest! {
    #[test]
    fn total_loss_is_linear(
        l in prop::array::uniform3(0.0f64..10.0),
        lam in prop::array::uniform3(0.0f64..2.0),
        k in 0usize..3,
        d in 0.0f64..5.0,
    ) {
        let w = LossWeights { lambda1: lam[0], lambda2: lam[1], lambda3: lam[2] };
        let base = total_loss(l[0], l[1], l[2], &w).unwrap();
        let mut moved = l;
        moved[k] += d;
        let shifted = total_loss(moved[0], moved[1], moved[2], &w).unwrap();
        prop_assert!((shifted - base - lam[k] * d).abs() < 1e-9);
    }
}
