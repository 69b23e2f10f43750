//! A small stochastic grammar of LaTeX expressions.
//!
//! ```text
//! expr   := term (op term){0..2}
//! term   := atom                      60
//!         | atom op term              15
//!         | atom script               10
//!         | \frac { inner } { inner } 10
//!         | \sqrt { inner }            5
//! script := ^ { inner } | _ { inner } | _ { inner } ^ { inner }
//! inner  := term (op term){0..1}      one level deeper
//! ```
//!
//! When the depth budget is spent only `atom` and `atom op term` remain,
//! renormalised to 80/20.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ExprSample;
use crate::error::Result;
use crate::latex::{Token, TokenSeq, Vocab};
use crate::posforest::D_MAX;

const ATOMS: &[&str] = &[
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "a", "b", "c", "x", "y", "z", "n", "\\alpha", "\\beta",
    "\\pi", "\\theta",
];
const OPS: &[&str] = &["+", "-", "=", "\\times"];

/// Every token the grammar can emit.
pub const SYNTH_TERMINALS: &[&str] = &[
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "a", "b", "c", "x", "y", "z", "n", "\\alpha", "\\beta",
    "\\pi", "\\theta", "+", "-", "=", "\\times", "^", "_", "{", "}", "\\frac", "\\sqrt",
];

/// Seed of the bundled overfit set.
pub const OVERFIT_SEED: u64 = 20_240_607;

/// Bumped whenever the grammar changes its output for a given seed.
pub const GRAMMAR_VERSION: u32 = 1;

/// The vocabulary over [`SYNTH_TERMINALS`].
pub fn synth_vocab() -> Vocab {
    Vocab::from_classes(SYNTH_TERMINALS.iter().copied()).expect("terminals are valid classes")
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    out: Vec<&'static str>,
}

impl Gen<'_> {
    fn pick(&mut self, from: &[&'static str]) {
        let i = self.rng.gen_range(0..from.len());
        self.out.push(from[i]);
    }

    fn expr(&mut self, budget: usize, max_terms: usize) {
        let terms = self.rng.gen_range(1..=max_terms);
        for k in 0..terms {
            if k > 0 {
                self.pick(OPS);
            }
            self.term(budget);
        }
    }

    fn term(&mut self, budget: usize) {
        let roll = if budget == 0 {
            // atom 60 : binop 15
            self.rng.gen_range(0..75)
        } else {
            self.rng.gen_range(0..100)
        };
        match roll {
            0..60 => self.pick(ATOMS),
            60..75 => {
                self.pick(ATOMS);
                self.pick(OPS);
                self.term(budget);
            }
            75..85 => {
                self.pick(ATOMS);
                match self.rng.gen_range(0..10) {
                    0..5 => self.group("^", budget - 1),
                    5..8 => self.group("_", budget - 1),
                    _ => {
                        self.group("_", budget - 1);
                        self.group("^", budget - 1);
                    }
                }
            }
            85..95 => {
                self.out.push("\\frac");
                self.group("", budget - 1);
                self.group("", budget - 1);
            }
            _ => {
                self.out.push("\\sqrt");
                self.group("", budget - 1);
            }
        }
    }

    fn group(&mut self, lead: &'static str, budget: usize) {
        if !lead.is_empty() {
            self.out.push(lead);
        }
        self.out.push("{");
        self.expr(budget, 2);
        self.out.push("}");
    }
}

fn generate(rng: &mut ChaCha8Rng, max_depth: usize) -> TokenSeq {
    let mut g = Gen { rng, out: Vec::new() };
    g.expr(max_depth.min(D_MAX), 3);
    let tokens = g.out.into_iter().map(|t| Token::new(t).expect("terminal")).collect();
    TokenSeq::new(tokens).expect("grammar output is balanced")
}

/// One expression, a pure function of `(seed, max_depth)`. Depths above
/// [`D_MAX`] are clamped.
pub fn synth_expression(seed: u64, max_depth: usize) -> TokenSeq {
    generate(&mut ChaCha8Rng::seed_from_u64(seed), max_depth)
}

/// `n` expressions; sample `i` draws from ChaCha stream `i` of `seed`, so
/// sample 0 equals [`synth_expression`] and any prefix is stable.
pub fn synth_corpus(seed: u64, n: usize, max_depth: usize) -> Vec<TokenSeq> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate(&mut rng, max_depth)
        })
        .collect()
}

/// The bundled 64-sample training set: distinct depth-2 expressions of at
/// most 16 tokens, rendered.
pub fn overfit_set() -> Result<Vec<ExprSample>> {
    let vocab = synth_vocab();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut i = 0u64;
    while out.len() < 64 {
        let mut rng = ChaCha8Rng::seed_from_u64(OVERFIT_SEED);
        rng.set_stream(i);
        i += 1;
        let seq = generate(&mut rng, 2);
        if seq.len() <= 16 && seen.insert(seq.to_spaced()) {
            out.push(ExprSample::synthetic(seq, &vocab)?);
        }
    }
    Ok(out)
}
