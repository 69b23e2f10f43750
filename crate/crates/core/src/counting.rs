//! Per-class symbol counts and the smooth-L1 counting loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latex::{TokenSeq, Vocab};

/// Symbol counts indexed by vocabulary class (reserved entries excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountVector {
    pub counts: Vec<f64>,
}

impl CountVector {
    pub fn zeros(len: usize) -> Self {
        CountVector { counts: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `(class, count)` pairs for non-zero entries, in vocabulary order.
    pub fn nonzero<'v>(&'v self, vocab: &'v Vocab) -> impl Iterator<Item = (&'v str, f64)> + 'v {
        vocab
            .classes()
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c != 0.0)
            .map(|(k, &c)| (k.as_str(), c))
    }
}

/// Ground-truth multiplicity of every class in `seq`.
pub fn count_vector(seq: &TokenSeq, vocab: &Vocab) -> Result<CountVector> {
    let mut cv = CountVector::zeros(vocab.num_classes());
    for id in vocab.encode(seq)? {
        cv.counts[id] += 1.0;
    }
    Ok(cv)
}

/// Smooth-L1 of one residual with transition point 1.
pub fn smooth_l1_elem(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

/// Mean smooth-L1 over classes.
pub fn smooth_l1(pred: &CountVector, target: &CountVector) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .counts
        .iter()
        .zip(&target.counts)
        .map(|(p, t)| smooth_l1_elem(p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}
