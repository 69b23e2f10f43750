mod common;

use common::brute_labels;
use hmer::dataset::synth_corpus;
use hmer::latex::{tokenize, Token, TokenSeq};
use hmer::posforest::{encode_position_labels, parse_forest, RelPos};
use proptest::prelude::*;

fn seq(tokens: &[String]) -> TokenSeq {
    TokenSeq::new(tokens.iter().map(|t| Token::new(t.as_str()).unwrap()).collect()).unwrap()
}

fn labels_as_str(s: &TokenSeq) -> (Vec<usize>, Vec<&'static str>) {
    let l = encode_position_labels(s).unwrap();
    (l.depths, l.relpos.iter().map(|r| r.as_str()).collect())
}

fn strs(s: &TokenSeq) -> Vec<&str> {
    s.iter().map(Token::as_str).collect()
}

fn v(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Random well-formed expressions, including root indices, single-token
/// scripts and bare groups that the synthetic grammar never emits.
fn expr() -> impl Strategy<Value = Vec<String>> {
    let atom = || prop::sample::select(vec!["a", "x", "2", "\\alpha", "+", "(", ")"]).prop_map(|s| v(&[s]));
    atom().prop_recursive(4, 48, 3, move |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(|p| p.concat()),
            (atom(), prop::sample::select(vec!["^", "_"]), inner.clone())
                .prop_map(|(b, op, s)| [b, v(&[op, "{"]), s, v(&["}"])].concat()),
            (atom(), inner.clone(), inner.clone())
                .prop_map(|(b, lo, hi)| [b, v(&["_", "{"]), lo, v(&["}", "^", "{"]), hi, v(&["}"])].concat()),
            (atom(), prop::sample::select(vec!["^", "_"]), atom())
                .prop_map(|(b, op, s)| [b, v(&[op]), s].concat()),
            (inner.clone(), inner.clone())
                .prop_map(|(n, d)| [v(&["\\frac", "{"]), n, v(&["}", "{"]), d, v(&["}"])].concat()),
            inner.clone().prop_map(|r| [v(&["\\sqrt", "{"]), r, v(&["}"])].concat()),
            (atom(), inner.clone())
                .prop_map(|(i, r)| [v(&["\\sqrt", "["]), i, v(&["]", "{"]), r, v(&["}"])].concat()),
            inner.clone().prop_map(|g| [v(&["{"]), g, v(&["}"])].concat()),
        ]
    })
}

#[test]
fn matches_brute_force_on_synthetic_corpus() {
    for (i, s) in synth_corpus(11, 1000, 3).iter().enumerate() {
        assert_eq!(labels_as_str(s), brute_labels(&strs(s)), "sample {i}: {}", s.to_spaced());
    }
}

#[test]
fn documented_examples() {
    let cases: &[(&str, &[usize], &[&str])] = &[
        ("a + b", &[0, 0, 0], &["middle"; 3]),
        ("x^{2}", &[0, 1, 1, 1, 1], &["middle", "upper", "upper", "upper", "upper"]),
        ("\\frac{a}{b}", &[0, 1, 1, 1, 1, 1, 1], &["middle", "upper", "upper", "upper", "lower", "lower", "lower"]),
        ("\\sqrt{x}", &[0, 1, 1, 1], &["middle"; 4]),
        ("a", &[0], &["middle"]),
    ];
    for (src, d, r) in cases {
        let (depths, rel) = labels_as_str(&tokenize(src).unwrap());
        assert_eq!((&depths[..], &rel[..]), (*d, *r), "{src}");
    }
    let (d, r) = labels_as_str(&tokenize("x^{y^{2}}").unwrap());
    assert_eq!((d[3], r[3]), (1, "upper"));
    assert_eq!((d[6], r[6]), (2, "upper"));
}

#[test]
fn root_index_is_upper() {
    let (d, r) = labels_as_str(&tokenize("\\sqrt[3]{x}").unwrap());
    assert_eq!(d, [0, 1, 1, 1, 1, 1, 1]);
    assert_eq!(r, ["middle", "upper", "upper", "upper", "middle", "middle", "middle"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn oracle_equivalence(tokens in expr()) {
        let s = seq(&tokens);
        prop_assert_eq!(labels_as_str(&s), brute_labels(&strs(&s)));
    }

    #[test]
    fn coverage_and_root_middle(tokens in expr()) {
        let s = seq(&tokens);
        let l = encode_position_labels(&s).unwrap();
        prop_assert_eq!(l.depths.len(), s.len());
        prop_assert_eq!(l.relpos.len(), s.len());
        for (d, r) in l.depths.iter().zip(&l.relpos) {
            if *d == 0 {
                prop_assert_eq!(*r, RelPos::Middle);
            }
        }
    }

    #[test]
    fn forest_spans_tile_the_sequence(tokens in expr()) {
        let s = seq(&tokens);
        let forest = parse_forest(&s).unwrap();
        let mut next = 0;
        for n in &forest {
            prop_assert_eq!(n.token_span.start, next);
            prop_assert!(n.token_span.end > n.token_span.start);
            next = n.token_span.end;
        }
        prop_assert_eq!(next, s.len());
    }

    #[test]
    fn depth_changes_only_at_boundaries(tokens in expr()) {
        let s = seq(&tokens);
        let t = strs(&s);
        let l = encode_position_labels(&s).unwrap();
        for i in 0..t.len().saturating_sub(1) {
            if l.depths[i] != l.depths[i + 1] {
                let entering = matches!(t[i + 1], "^" | "_" | "{" | "[");
                let leaving = matches!(t[i], "}" | "]") || (i > 0 && matches!(t[i - 1], "^" | "_"));
                prop_assert!(entering || leaving, "{} at {}", s.to_spaced(), i);
            }
        }
    }

    #[test]
    fn flat_sequences_are_all_root(tokens in prop::collection::vec(prop::sample::select(vec!["a", "1", "+", "=", "\\beta", "(", ")"]), 1..30)) {
        let s = seq(&tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>());
        let l = encode_position_labels(&s).unwrap();
        prop_assert!(l.depths.iter().all(|&d| d == 0));
        prop_assert!(l.relpos.iter().all(|&r| r == RelPos::Middle));
    }
}
