use hmer::dataset::{render_synthetic, synth_vocab};
use hmer::latex::tokenize;
use hmer::model::backbone::{Backbone, BackboneConfig};
use hmer::model::cnn::{channel_attention, ccad_step, Ccad, CcadConfig, ChannelAttention, Mscm, MscmConfig};
use hmer::model::transformer::{
    greedy_decode, implicit_attention_refine, loss_pos, loss_rec, positional_encoding, positional_encoding_2d, Special,
    TransformerConfig, TransformerViewer,
};
use hmer::model::{Model, ModelConfig, TaskFlags};
use hmer::posforest::{RelPos, D_MAX};
use hmer::tensor::{Graph, ParamStore, Tensor};
use hmer::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn small_viewer(store: &mut ParamStore<f64>, vocab: usize, rng: &mut ChaCha8Rng) -> TransformerViewer {
    let cfg = TransformerConfig {
        model_dim: 16,
        heads: 2,
        ffn_dim: 16,
        layers: 2,
        refine_kernel: 3,
        ..TransformerConfig::default()
    };
    TransformerViewer::new(store, &cfg, 5, vocab, rng).unwrap()
}

#[test]
fn decoder_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab = 11;
    let mut store = ParamStore::new();
    let viewer = small_viewer(&mut store, vocab, &mut rng);
    for case in 0..20 {
        let g = Graph::<f64>::inference();
        let feats = g.constant(random(&[5, 3, 4], &mut rng));
        let mem = viewer.encode_memory(&g, &store, feats).unwrap();
        let t = rng.gen_range(2..8);
        let ids: Vec<usize> = (0..t).map(|_| rng.gen_range(0..vocab)).collect();
        let at = rng.gen_range(1..t);
        let mut other = ids.clone();
        other[at] = (other[at] + 1 + rng.gen_range(0..vocab - 1)) % vocab;
        let a = viewer.decoder_forward(&g, &store, &mem, &ids).unwrap();
        let b = viewer.decoder_forward(&g, &store, &mem, &other).unwrap();
        for (x, y) in [(a.symbol_logits, b.symbol_logits), (a.depth_logits, b.depth_logits), (a.relpos_logits, b.relpos_logits)] {
            let (x, y) = (x.value(), y.value());
            let w = x.shape()[1];
            assert_eq!(x.data()[..at * w], y.data()[..at * w], "case {case}");
            assert_ne!(x.data()[at * w..], y.data()[at * w..], "case {case}");
        }
    }
}

#[test]
fn decoder_shapes_and_normalised_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let viewer = small_viewer(&mut store, 9, &mut rng);
    let g = Graph::<f64>::inference();
    let mem = viewer.encode_memory(&g, &store, g.constant(random(&[5, 2, 6], &mut rng))).unwrap();
    let out = viewer.decoder_forward(&g, &store, &mem, &[0, 3, 4, 1, 2]).unwrap();
    assert_eq!(out.symbol_logits.shape(), [5, 9]);
    assert_eq!(out.depth_logits.shape(), [5, D_MAX + 1]);
    assert_eq!(out.relpos_logits.shape(), [5, 3]);
    assert_eq!(out.cross_attention.len(), 2);
    for att in &out.cross_attention {
        let v = att.value();
        assert_eq!(v.shape(), [2, 5, 12]);
        for row in v.data().chunks(12) {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    for logits in [out.symbol_logits, out.depth_logits, out.relpos_logits] {
        let w = logits.shape()[1];
        for row in logits.softmax(1).unwrap().value().data().chunks(w) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    assert!(matches!(viewer.decoder_forward(&g, &store, &mem, &[]), Err(Error::EmptySequence)));
}

#[test]
fn loss_identities() {
    let g = Graph::<f64>::inference();
    let k = 37;
    let uniform = g.constant(Tensor::zeros(&[6, k]));
    let l = loss_rec(uniform, &[0, 5, 7, 1, 36, 2], None).unwrap().item();
    assert!((l - (k as f64).ln()).abs() < 1e-6);

    let depth = g.constant(Tensor::zeros(&[4, D_MAX + 1]));
    let rel = g.constant(Tensor::zeros(&[4, 3]));
    let p = loss_pos(depth, rel, &[0, 1, 2, 8], &[RelPos::Middle, RelPos::Upper, RelPos::Lower, RelPos::Upper], None)
        .unwrap()
        .item();
    assert!((p - ((D_MAX as f64 + 1.0).ln() + 3f64.ln())).abs() < 1e-6);

    // masked positions drop out of both the sum and the count
    let peaked = g.constant(Tensor::from_fn(&[2, 3], |i| if i == 0 { 50.0 } else { 0.0 }));
    let masked = loss_rec(peaked, &[0, 2], Some(2)).unwrap().item();
    assert!(masked < 1e-12);
    assert!(matches!(loss_rec(uniform, &[0, 1, 2, 3, 4, k], None), Err(Error::TargetOutOfRange { .. })));
}

#[test]
fn refinement_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = Graph::<f64>::inference();
    let (heads, grid) = (2, (3, 4));
    let raw = g.constant(random(&[heads, 12], &mut rng));
    let kernel = g.constant(random(&[heads, heads, 3, 3], &mut rng));
    let plain = raw.softmax(1).unwrap().value();
    let zero = implicit_attention_refine(raw, g.constant(Tensor::zeros(&[heads, 12])), kernel, grid).unwrap();
    assert_eq!(zero.value(), plain);

    // identity transform: centre tap of each head's own channel
    let identity = g.constant(Tensor::from_fn(&[heads, heads, 3, 3], |i| {
        let (o, c, tap) = (i / 18, (i / 9) % 2, i % 9);
        if o == c && tap == 4 {
            1.0
        } else {
            0.0
        }
    }));
    let hot = 5;
    let history = g.constant(Tensor::from_fn(&[heads, 12], |i| if i % 12 == hot { 3.0 } else { 0.0 }));
    let refined = implicit_attention_refine(raw, history, identity, grid).unwrap().value();
    for h in 0..heads {
        let row = &refined.data()[h * 12..(h + 1) * 12];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row[hot] < plain.data()[h * 12 + hot]);
    }
    let bad = g.constant(Tensor::zeros(&[heads, 11]));
    assert!(implicit_attention_refine(raw, bad, kernel, grid).is_err());
}

#[test]
fn positional_encodings() {
    let pe = positional_encoding(64, 16).unwrap();
    let expect0: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
    assert_eq!(&pe.data()[..16], &expect0[..]);
    assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let rows: Vec<&[f64]> = pe.data().chunks(16).collect();
    for i in 0..64 {
        for j in i + 1..64 {
            assert!(rows[i].iter().zip(rows[j]).any(|(a, b)| (a - b).abs() > 1e-9), "{i} {j}");
        }
    }
    let pe2 = positional_encoding_2d(3, 5, 8).unwrap();
    assert_eq!(pe2.shape(), [15, 8]);
    let one_d = positional_encoding(5, 4).unwrap();
    assert_eq!(&pe2.data()[(2 * 5 + 3) * 8 + 4..(2 * 5 + 3) * 8 + 8], &one_d.data()[3 * 4..4 * 4]);
    assert!(matches!(positional_encoding(4, 7), Err(Error::BadDim(7, _))));
    assert!(matches!(positional_encoding_2d(2, 2, 6), Err(Error::BadDim(6, _))));
}

#[test]
fn greedy_decode_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let viewer = small_viewer(&mut store, 8, &mut rng);
    let special = Special { sos: 5, eos: 6, pad: 7 };
    let g = Graph::<f64>::inference();
    let mem = viewer.encode_memory(&g, &store, g.constant(random(&[5, 2, 3], &mut rng))).unwrap();
    let one = greedy_decode(&g, &store, &viewer, &mem, special, 1).unwrap();
    assert!(one.ids.len() <= 1);
    let a = greedy_decode(&g, &store, &viewer, &mem, special, 12).unwrap();
    let b = greedy_decode(&g, &store, &viewer, &mem, special, 12).unwrap();
    assert_eq!(a, b);
    assert!(a.ids.iter().all(|&i| i != special.sos && i != special.pad && i != special.eos));
    assert_eq!(a.truncated, a.ids.len() == 12);
}

fn mscm(store: &mut ParamStore<f64>, attention: bool, rng: &mut ChaCha8Rng) -> Mscm {
    let cfg = MscmConfig {
        hidden: 6,
        squeeze: 2,
        feature_dim: 4,
        channel_attention: attention,
        kernels: [3, 5],
    };
    Mscm::new(store, &cfg, 4, 7, rng).unwrap()
}

#[test]
fn counting_module_bounds_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let m = mscm(&mut store, true, &mut rng);
    for (h, w) in [(2, 3), (5, 9), (1, 1)] {
        let g = Graph::<f64>::inference();
        let x = g.constant(random(&[4, h, w], &mut rng));
        let out = m.forward(&g, &store, x).unwrap();
        let c = out.count_pred.value();
        assert_eq!(c.shape(), [7]);
        assert!(c.data().iter().all(|&v| v >= 0.0 && v <= (h * w) as f64));
        assert_eq!(out.count_feature.shape(), [1, 4]);
        let s = m.swapped().forward(&g, &store, x).unwrap().count_pred.value();
        for (a, b) in c.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn counting_is_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let m = mscm(&mut store, true, &mut rng);
    let (h, w) = (8, 14);
    let patch = random(&[4, 3, 4], &mut rng);
    let place = |dx: usize| {
        Tensor::from_fn(&[4, h, w], |i| {
            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
            if (3..6).contains(&y) && (3 + dx..7 + dx).contains(&x) {
                patch.data()[(c * 3 + y - 3) * 4 + x - 3 - dx]
            } else {
                0.0
            }
        })
    };
    let g = Graph::<f64>::inference();
    let a = m.forward(&g, &store, g.constant(place(0))).unwrap().count_pred.value();
    let b = m.forward(&g, &store, g.constant(place(4))).unwrap().count_pred.value();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-9, "{x} {y}");
    }
}

#[test]
fn channel_attention_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let ca = ChannelAttention::new(&mut store, "ca", 6, 2, &mut rng);
    let g = Graph::<f64>::inference();
    let x = g.constant(random(&[6, 3, 3], &mut rng));
    let gate = ca.gate(&g, &store, x).unwrap().value();
    assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let out = channel_attention(&g, &store, &ca, x).unwrap().value();
    let xv = x.value();
    for c in 0..6 {
        let norm = |t: &Tensor<f64>| t.data()[c * 9..(c + 1) * 9].iter().map(|v| v * v).sum::<f64>();
        assert!(norm(&out) <= norm(&xv));
    }

    store.get_mut(ca.w2).data_mut().fill(0.0);
    let g = Graph::<f64>::inference();
    let x = g.constant(xv.clone());
    assert!(ca.gate(&g, &store, x).unwrap().value().data().iter().all(|&v| v == 0.5));
    let half = channel_attention(&g, &store, &ca, x).unwrap().value();
    for (h, v) in half.data().iter().zip(xv.data()) {
        assert_eq!(*h, 0.5 * v);
    }
}

#[test]
fn disabling_channel_attention_changes_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let on = mscm(&mut store, true, &mut rng);
    let mut off = on.clone();
    off.cfg.channel_attention = false;
    let g = Graph::<f64>::inference();
    let x = g.constant(random(&[4, 4, 5], &mut rng));
    assert_ne!(on.forward(&g, &store, x).unwrap().count_pred.value(), off.forward(&g, &store, x).unwrap().count_pred.value());
}

#[test]
fn coverage_decoder_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let cfg = CcadConfig {
        hidden: 8,
        embed_dim: 4,
        attention_dim: 6,
        coverage_kernel: 3,
    };
    let ccad = Ccad::new(&mut store, &cfg, 5, 3, 10, &mut rng).unwrap();
    let g = Graph::<f64>::inference();
    let mem = ccad.memory(&g, &store, g.constant(random(&[5, 3, 4], &mut rng))).unwrap();
    let count = g.constant(random(&[1, 3], &mut rng));
    let mut state = ccad.initial_state(&g, &store, &mem);
    let mut prev = state.coverage.value();
    for k in 1..=6 {
        let step = ccad_step(&g, &store, &ccad, state, &mem, count, k % 10).unwrap();
        assert_eq!(step.logits.shape(), [1, 10]);
        let att = step.attention.value();
        assert!((att.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let cov = step.state.coverage.value();
        assert!((cov.data().iter().sum::<f64>() - k as f64).abs() < 1e-5);
        assert!(cov.data().iter().zip(prev.data()).all(|(a, b)| a >= b));
        prev = cov;
        state = step.state;
    }

    let other = g.constant(random(&[1, 3], &mut rng));
    let s0 = ccad.initial_state(&g, &store, &mem);
    let a = ccad_step(&g, &store, &ccad, s0, &mem, count, 2).unwrap().logits.value();
    let b = ccad_step(&g, &store, &ccad, s0, &mem, other, 2).unwrap().logits.value();
    assert_ne!(a, b);

    let (logits, maps) = ccad.forward(&g, &store, &mem, count, &[0, 1, 2]).unwrap();
    assert_eq!(logits.shape(), [3, 10]);
    assert_eq!(maps.len(), 3);
}

#[test]
fn backbone_shapes_and_gradient_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = BackboneConfig::default();
    let mut store = ParamStore::<f32>::new();
    let bb = Backbone::new(&mut store, &cfg, &mut rng).unwrap();
    // 24 → +48 → ×0.5 → +48 → ×0.5 → +48
    assert_eq!(cfg.out_channels(), ((24 + 48) / 2 + 48) / 2 + 48);
    assert_eq!(cfg.total_stride(), 8);
    let g = Graph::<f32>::inference();
    let f = bb.forward(&g, &store, g.constant(Tensor::zeros(&[1, 64, 128]))).unwrap();
    assert_eq!(f.shape(), [cfg.out_channels(), 8, 16]);
    assert!(f.value().data().iter().all(|v| v.is_finite()));
    let wide = bb.forward(&g, &store, g.constant(Tensor::zeros(&[1, 64, 256]))).unwrap();
    assert_eq!(wide.shape()[2], 32);
    assert!(matches!(
        bb.forward(&g, &store, g.constant(Tensor::zeros(&[1, 4, 4]))),
        Err(Error::InputTooSmall { .. })
    ));

    let tiny = ModelConfig::tiny(TaskFlags::BASELINE).backbone;
    let mut store = ParamStore::<f64>::new();
    let bb = Backbone::new(&mut store, &tiny, &mut rng).unwrap();
    let g = Graph::<f64>::new();
    let out = bb.forward(&g, &store, g.constant(random(&[1, 8, 10], &mut rng))).unwrap();
    let loss = out.mul(out).unwrap().sum();
    g.backward(loss).unwrap();
    let mut grads = hmer::tensor::Gradients::zeros_like(&store);
    g.accumulate_param_grads(&mut grads);
    let first = store.ids().next().unwrap();
    assert!(grads.get(first).iter().any(|&v| v != 0.0), "{}", store.name(first));
}

#[test]
fn full_model_variants() {
    let vocab = synth_vocab();
    let seq = tokenize("x^{2}+1").unwrap();
    let image = render_synthetic(&seq).unwrap();
    for tasks in [TaskFlags::BASELINE, TaskFlags::TASK1, TaskFlags::MULTI_VIEW, TaskFlags::MULTI_VIEW_TASK2] {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::<f32>::new();
        let cfg = ModelConfig::tiny(tasks);
        let model = Model::new(&mut store, &cfg, &vocab, &mut rng).unwrap();
        let sample = hmer::dataset::ExprSample::new(image.clone(), seq.clone(), &vocab).unwrap();
        let target = hmer::model::Target::from_sample(&sample, &vocab).unwrap();
        let g = Graph::new();
        let l = model.losses(&g, &store, &image, &target).unwrap();
        assert!(l.rec.item().is_finite() && l.pos.item().is_finite());
        assert_eq!(l.count.is_some(), tasks.task1, "{}", tasks.variant());
        assert_eq!(l.rec2.is_some(), tasks.task2, "{}", tasks.variant());
        assert_eq!(model.mscm().is_some(), tasks.multi_view);
        let p = model.predict(&store, &image, 5).unwrap();
        assert!(p.decoded.ids.len() <= 5);
        assert_eq!(p.counts.map(|c| c.len()), tasks.task1.then_some(vocab.num_classes()));
        assert_eq!(TaskFlags::from_variant(tasks.variant()).unwrap(), tasks);
    }
}
