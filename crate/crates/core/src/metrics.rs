//! Expression-level recognition rates from token edit distances.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levenshtein distance: the fewest insertions, deletions and substitutions
/// turning `pred` into `truth`. Either side may be empty.
pub fn edit_distance<T: PartialEq>(pred: &[T], truth: &[T]) -> usize {
    // single rolling row over `truth`
    let mut row: Vec<usize> = (0..=truth.len()).collect();
    for (i, p) in pred.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, t) in truth.iter().enumerate() {
            let sub = diag + usize::from(p != t);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[truth.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percentage of exact matches.
    pub exprate: f64,
    pub le1: f64,
    pub le2: f64,
    pub le3: f64,
    pub n_samples: usize,
    pub distances: Vec<usize>,
}

impl MetricsReport {
    pub fn from_distances(distances: Vec<usize>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let n = distances.len();
        let rate = |k: usize| 100.0 * distances.iter().filter(|&&d| d <= k).count() as f64 / n as f64;
        Ok(MetricsReport {
            exprate: rate(0),
            le1: rate(1),
            le2: rate(2),
            le3: rate(3),
            n_samples: n,
            distances,
        })
    }

    /// Number of exact matches.
    pub fn exact(&self) -> usize {
        self.distances.iter().filter(|&&d| d == 0).count()
    }

    /// Fixed-order text table, one metric per line.
    pub fn table(&self) -> String {
        format!(
            "ExpRate {:.2}\n<=1 {:.2}\n<=2 {:.2}\n<=3 {:.2}\nN {}\n",
            self.exprate, self.le1, self.le2, self.le3, self.n_samples
        )
    }

    /// `sample_id<TAB>distance` lines with a header.
    pub fn per_sample_tsv<S: AsRef<str>>(&self, ids: &[S]) -> Result<String> {
        if ids.len() != self.distances.len() {
            return Err(Error::PairCountMismatch(ids.len(), self.distances.len()));
        }
        let mut out = String::from("sample_id\tdistance\n");
        for (id, d) in ids.iter().zip(&self.distances) {
            let _ = writeln!(out, "{}\t{d}", id.as_ref());
        }
        Ok(out)
    }
}

/// Pairs each prediction with its reference and summarises the distances.
pub fn evaluate<T: PartialEq, P: AsRef<[T]>, R: AsRef<[T]>>(predictions: &[P], truths: &[R]) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::PairCountMismatch(predictions.len(), truths.len()));
    }
    MetricsReport::from_distances(
        predictions
            .iter()
            .zip(truths)
            .map(|(p, t)| edit_distance(p.as_ref(), t.as_ref()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(edit_distance(&["a", "b"], &["a", "b"]), 0);
        assert_eq!(edit_distance(&["a", "b"], &["a", "c"]), 1);
        assert_eq!(edit_distance::<u8>(&[], &[1, 2, 3]), 3);
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn rates() {
        let r = evaluate(&[vec![1, 2], vec![1, 2, 3]], &[vec![1, 2], vec![1]]).unwrap();
        assert_eq!((r.exprate, r.le1, r.le2, r.le3), (50.0, 50.0, 100.0, 100.0));
        assert!(r.table().starts_with("ExpRate 50.00\n"));
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate::<u8, _, _>(&[vec![1]], &[vec![1], vec![2]]), Err(Error::PairCountMismatch(1, 2))));
        assert!(matches!(evaluate::<u8, Vec<u8>, Vec<u8>>(&[], &[]), Err(Error::EmptyEvaluation)));
    }
}
