mod common;

use common::edit_distance_oracle;
use hmer::metrics::{edit_distance, evaluate, MetricsReport};
use hmer::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = rng.gen_range(0..15);
    (0..n).map(|_| rng.gen_range(0..4u8)).collect()
}

#[test]
fn matches_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let (a, b) = (random_seq(&mut rng), random_seq(&mut rng));
        assert_eq!(edit_distance(&a, &b), edit_distance_oracle(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn documented_reports() {
    let all = evaluate(&[vec!["a"], vec!["b", "c"]], &[vec!["a"], vec!["b", "c"]]).unwrap();
    assert_eq!((all.exprate, all.le1, all.le2, all.le3), (100.0, 100.0, 100.0, 100.0));

    let half = evaluate(&[vec!["a", "b"], vec!["x", "y", "z"]], &[vec!["a", "b"], vec!["x"]]).unwrap();
    assert_eq!((half.exprate, half.le1, half.le2, half.le3), (50.0, 50.0, 100.0, 100.0));
    assert_eq!(half.distances, [0, 2]);
    assert_eq!(half.exact(), 1);

    assert!(matches!(evaluate::<u8, Vec<u8>, Vec<u8>>(&[], &[]), Err(Error::EmptyEvaluation)));
    assert!(matches!(evaluate(&[vec![1]], &[vec![1], vec![2]]), Err(Error::PairCountMismatch(1, 2))));
}

#[test]
fn stub_with_one_substitution() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truths: Vec<Vec<u8>> = (0..40).map(|_| (0..rng.gen_range(1..10)).map(|_| rng.gen_range(0..5)).collect()).collect();
    let preds: Vec<Vec<u8>> = truths
        .iter()
        .map(|t| {
            let mut p = t.clone();
            let i = rng.gen_range(0..p.len());
            p[i] += 10;
            p
        })
        .collect();
    let r = evaluate(&preds, &truths).unwrap();
    assert_eq!(r.exprate, 0.0);
    assert_eq!(r.le1, 100.0);
}

#[test]
fn table_and_tsv() {
    let r = MetricsReport::from_distances(vec![0, 3]).unwrap();
    assert_eq!(r.table(), "ExpRate 50.00\n<=1 50.00\n<=2 50.00\n<=3 100.00\nN 2\n");
    assert_eq!(r.per_sample_tsv(&["a", "b"]).unwrap(), "sample_id\tdistance\na\t0\nb\t3\n");
    assert!(r.per_sample_tsv(&["a"]).is_err());
}

proptest! {
    #[test]
    fn metric_axioms(
        a in prop::collection::vec(0u8..4, 0..12),
        b in prop::collection::vec(0u8..4, 0..12),
        c in prop::collection::vec(0u8..4, 0..12),
    ) {
        let (ab, ba) = (edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(ab <= edit_distance(&a, &c) + edit_distance(&c, &b));
        prop_assert!(ab <= a.len().max(b.len()));
    }

    #[test]
    fn rates_are_monotone(d in prop::collection::vec(0usize..6, 1..50)) {
        let r = MetricsReport::from_distances(d).unwrap();
        prop_assert!(0.0 <= r.exprate && r.exprate <= r.le1 && r.le1 <= r.le2 && r.le2 <= r.le3 && r.le3 <= 100.0);
    }
}
