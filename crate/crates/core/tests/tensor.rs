mod common;

use common::{naive_conv, naive_matmul};
use hmer::checks::{primitive_checks, CheckKind};
use hmer::tensor::{grad_check, Checkpoint, Conv2dSpec, Gradients, Graph, ParamStore, PoolKind, Tensor};
use hmer::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_matches_triple_loop((n, k, m, a, b) in (1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(n, k, m)| (Just(n), Just(k), Just(m), values(n * k), values(k * m)))) {
        let g = Graph::<f64>::inference();
        let x = g.constant(Tensor::new(&[n, k], a.clone()).unwrap());
        let y = g.constant(Tensor::new(&[k, m], b.clone()).unwrap());
        let got = x.matmul(y).unwrap().value();
        prop_assert_eq!(got.shape(), &[n, m]);
        for (u, w) in got.data().iter().zip(naive_matmul(&a, &b, n, k, m)) {
            prop_assert!((u - w).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_loop((c, h, w, o, k, stride, pad, x, wt) in (1usize..3, 3usize..8, 3usize..8, 1usize..3, prop::sample::select(vec![1usize, 3]), 1usize..3, 0usize..2)
        .prop_flat_map(|(c, h, w, o, k, s, p)| (Just(c), Just(h), Just(w), Just(o), Just(k), Just(s), Just(p), values(c * h * w), values(o * c * k * k)))) {
        let g = Graph::<f64>::inference();
        let xv = g.constant(Tensor::new(&[c, h, w], x.clone()).unwrap());
        let wv = g.constant(Tensor::new(&[o, c, k, k], wt.clone()).unwrap());
        let got = xv.conv2d(wv, None, Conv2dSpec { stride, padding: pad }).unwrap().value();
        let (want, oh, ow) = naive_conv(&x, (c, h, w), &wt, (o, k), stride, pad);
        prop_assert_eq!(got.shape(), &[o, oh, ow]);
        for (u, v) in got.data().iter().zip(want) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let g = Graph::<f64>::inference();
        let s = g.constant(Tensor::new(&[rows, cols], data).unwrap()).softmax(1).unwrap().value();
        for r in s.data().chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

#[test]
fn every_primitive_passes_gradient_check() {
    for seed in 0..2 {
        let results = primitive_checks(seed).unwrap();
        assert!(results.len() >= 25);
        for r in &results {
            assert_eq!(r.kind, CheckKind::Primitive);
            assert!(r.passed(), "{} seed {seed}: {:.3e}", r.name, r.max_rel_error);
        }
    }
}

#[test]
fn gradient_check_detects_wrong_derivative() {
    // relu has a kink at 0; straddling it the central difference disagrees
    let x = Tensor::from_f64(&[1], &[1e-7]).unwrap();
    let err = grad_check(|_, v| Ok(v[0].relu().sum()), &[x], 1e-3).unwrap();
    assert!(err > 0.1);
}

#[test]
fn backward_through_shared_nodes_accumulates() {
    let g = Graph::<f64>::new();
    let x = g.input(Tensor::from_f64(&[2], &[3.0, -1.0]).unwrap());
    let y = x.mul(x).unwrap().add(x).unwrap().sum();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[7.0, -1.0]);
}

#[test]
fn pooling_and_shapes() {
    let g = Graph::<f64>::inference();
    let x = g.constant(Tensor::from_fn(&[1, 4, 4], |i| i as f64));
    assert_eq!(x.pool2d(PoolKind::Sum, 2, 2).unwrap().value().data(), &[10.0, 18.0, 42.0, 50.0]);
    assert_eq!(x.pool2d(PoolKind::Avg, 2, 2).unwrap().value().data(), &[2.5, 4.5, 10.5, 12.5]);
    assert!(matches!(x.matmul(g.constant(Tensor::zeros(&[1, 3, 2]))), Err(Error::ShapeMismatch { .. })));
    let l = g.constant(Tensor::zeros(&[2, 4]));
    let ce = l.cross_entropy(&[1, 3], None).unwrap().item();
    assert!((ce - 4f64.ln()).abs() < 1e-12);
    assert!(l.cross_entropy(&[4, 0], None).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    store.glorot("a.w", &[3, 4], 3, 4, &mut rng);
    store.zeros("a.b", &[4]);
    store.glorot("c", &[2, 2, 3, 3], 18, 18, &mut rng);
    let mut ck = Checkpoint::from_store(&store, "abc123");
    ck.set_meta("step", "17");
    let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.meta("step"), Some("17"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    ck.save(&path).unwrap();
    let mut fresh = ParamStore::<f32>::new();
    fresh.zeros("a.w", &[3, 4]);
    fresh.zeros("a.b", &[4]);
    fresh.zeros("c", &[2, 2, 3, 3]);
    Checkpoint::<f32>::load(&path).unwrap().load_into(&mut fresh).unwrap();
    for ((_, _, a), (_, _, b)) in store.iter().zip(fresh.iter()) {
        assert_eq!(a.data(), b.data());
    }

    let bytes = ck.to_bytes();
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::CorruptCheckpoint(_))));
    let mut wrong = ParamStore::<f32>::new();
    wrong.zeros("a.w", &[4, 3]);
    assert!(ck.load_into(&mut wrong).is_err());
}

#[test]
fn gradients_clip_arithmetic() {
    let mut store = ParamStore::<f64>::new();
    let id = store.zeros("w", &[2]);
    let mut g = Gradients::zeros_like(&store);
    g.add(id, &[3.0, 4.0]);
    assert_eq!(g.global_norm(), 5.0);
    g.scale(0.5);
    assert_eq!(g.get(id), &[1.5, 2.0]);
}
