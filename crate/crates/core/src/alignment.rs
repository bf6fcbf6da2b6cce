//! Cross-graph similarity, CSLS rescaling, pseudo-labels and ranking metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraphPair;
use crate::tensor::{dot, norm, Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimilarityKind {
    Cosine,
    Csls,
}

/// `|E1| × |E2|` similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<F> {
    pub values: Matrix<F>,
    pub kind: SimilarityKind,
}

impl<F: Real> SimilarityMatrix<F> {
    pub fn get(&self, i: usize, j: usize) -> F {
        self.values[(i, j)]
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }
}

fn unit_rows<F: Real>(m: &Matrix<F>, which: &str) -> Result<Matrix<F>> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if !(n > F::zero()) || !n.is_finite() {
            return Err(Error::NonFinite(format!("{which} row {i} has zero or non-finite norm")));
        }
        for x in out.row_mut(i) {
            *x = *x / n;
        }
    }
    Ok(out)
}

/// Cosine similarity between every row of `left` and every row of `right`.
pub fn similarity_matrix<F: Real>(left: &Matrix<F>, right: &Matrix<F>) -> Result<SimilarityMatrix<F>> {
    if left.cols() != right.cols() {
        return Err(Error::Shape(format!(
            "embedding dims differ: {} vs {}",
            left.cols(),
            right.cols()
        )));
    }
    let a = unit_rows(left, "left embedding")?;
    let b = unit_rows(right, "right embedding")?;
    let cols = b.rows();
    let mut values = Matrix::zeros(a.rows(), cols);
    values
        .as_mut_slice()
        .par_chunks_mut(cols.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = dot(a.row(i), b.row(j)).max(-F::one()).min(F::one());
            }
        });
    Ok(SimilarityMatrix {
        values,
        kind: SimilarityKind::Cosine,
    })
}

/// Mean of the `k` largest values, summed in descending order.
fn top_mean<F: Real>(mut xs: Vec<F>, k: usize) -> F {
    let desc = |a: &F, b: &F| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal);
    if k < xs.len() {
        xs.select_nth_unstable_by(k - 1, desc);
        xs.truncate(k);
    }
    xs.sort_unstable_by(desc);
    xs.iter().fold(F::zero(), |acc, x| acc + *x) / F::of(k as f64)
}

/// `S̃[i][j] = 2 S[i][j] − mean top-δ of row i − mean top-δ of column j`.
pub fn csls_adjust<F: Real>(s: &SimilarityMatrix<F>, delta: usize) -> Result<SimilarityMatrix<F>> {
    let (n, m) = (s.rows(), s.cols());
    if delta == 0 || delta > n.min(m) {
        return Err(Error::Config(format!(
            "CSLS neighborhood size {delta} must be in 1..={}",
            n.min(m)
        )));
    }
    let row_hub: Vec<F> = (0..n)
        .into_par_iter()
        .map(|i| top_mean(s.values.row(i).to_vec(), delta))
        .collect();
    let col_hub: Vec<F> = (0..m)
        .into_par_iter()
        .map(|j| top_mean((0..n).map(|i| s.get(i, j)).collect(), delta))
        .collect();
    let two = F::of(2.0);
    let mut values = Matrix::zeros(n, m);
    values
        .as_mut_slice()
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = two * s.get(i, j) - row_hub[i] - col_hub[j];
            }
        });
    Ok(SimilarityMatrix {
        values,
        kind: SimilarityKind::Csls,
    })
}

/// Cross-graph pairs that are each other's strict nearest neighbor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PseudoLabelSet {
    pairs: Vec<(usize, usize)>,
}

impl PseudoLabelSet {
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Index of the strict maximum, `None` when the maximum is shared.
fn strict_argmax<F: Real>(xs: impl Iterator<Item = F>) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    let mut tied = false;
    for (i, x) in xs.enumerate() {
        match best {
            Some((_, b)) if x < b => {}
            Some((_, b)) if x == b => tied = true,
            _ => {
                best = Some((i, x));
                tied = false;
            }
        }
    }
    best.filter(|_| !tied).map(|(i, _)| i)
}

/// Bidirectional matching: `(i, j)` is kept iff `S̃[i][j]` is the strict
/// maximum of both row `i` and column `j`.
pub fn mutual_nearest_labels<F: Real>(s: &SimilarityMatrix<F>) -> PseudoLabelSet {
    let (n, m) = (s.rows(), s.cols());
    let row_best: Vec<Option<usize>> = (0..n)
        .into_par_iter()
        .map(|i| strict_argmax(s.values.row(i).iter().copied()))
        .collect();
    let col_best: Vec<Option<usize>> = (0..m)
        .into_par_iter()
        .map(|j| strict_argmax((0..n).map(|i| s.get(i, j))))
        .collect();
    let pairs = row_best
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.filter(|&j| col_best[j] == Some(i)).map(|j| (i, j)))
        .collect();
    PseudoLabelSet::from_pairs(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
}

/// Rank of the true match in its row: one plus the number of other columns
/// scoring at least as high.
pub fn rank_of<F: Real>(s: &SimilarityMatrix<F>, i: usize, j: usize) -> usize {
    let target = s.get(i, j);
    1 + s
        .values
        .row(i)
        .iter()
        .enumerate()
        .filter(|&(c, v)| c != j && *v >= target)
        .count()
}

/// Hits@1, Hits@10 and MRR of `pairs` under `s`. Ties rank pessimistically.
pub fn evaluate<F: Real>(s: &SimilarityMatrix<F>, pairs: &[(usize, usize)]) -> Metrics {
    if pairs.is_empty() {
        return Metrics {
            hits1: 0.0,
            hits10: 0.0,
            mrr: 0.0,
        };
    }
    let ranks: Vec<usize> = pairs.par_iter().map(|&(i, j)| rank_of(s, i, j)).collect();
    let n = ranks.len() as f64;
    Metrics {
        hits1: ranks.iter().filter(|&&r| r <= 1).count() as f64 / n,
        hits10: ranks.iter().filter(|&&r| r <= 10).count() as f64 / n,
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
    }
}

/// Evaluates against the pair's reference alignment.
pub fn evaluate_reference<F: Real>(s: &SimilarityMatrix<F>, pair: &KnowledgeGraphPair) -> Metrics {
    evaluate(s, pair.reference_pairs())
}

/// Top-`top` candidates of every left entity as `(file_id_1, file_id_2,
/// score)`, sorted by descending score.
pub fn alignment_lines<F: Real>(
    s: &SimilarityMatrix<F>,
    pair: &KnowledgeGraphPair,
    top: usize,
) -> Vec<(u64, u64, f64)> {
    let mut out = Vec::new();
    for i in 0..s.rows() {
        let mut cols: Vec<usize> = (0..s.cols()).collect();
        cols.sort_by(|&a, &b| {
            s.get(i, b)
                .partial_cmp(&s.get(i, a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in cols.iter().take(top) {
            out.push((
                pair.g1.entity_ids().file_id(i),
                pair.g2.entity_ids().file_id(j),
                s.get(i, j).f64(),
            ));
        }
    }
    out.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(rows: &[Vec<f64>], kind: SimilarityKind) -> SimilarityMatrix<f64> {
        SimilarityMatrix {
            values: Matrix::from_rows(rows),
            kind,
        }
    }

    #[test]
    fn cosine_basics() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]);
        let s = similarity_matrix(&a, &b).unwrap();
        assert_eq!(s.values, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        let z = Matrix::from_rows(&[vec![0.0, 0.0]]);
        assert!(similarity_matrix(&z, &b).is_err());
    }

    #[test]
    fn csls_two_by_two() {
        let s = sim(&[vec![0.9, 0.5], vec![0.6, 0.8]], SimilarityKind::Cosine);
        let t = csls_adjust(&s, 1).unwrap();
        let want = [[0.0, -0.7], [-0.5, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((t.get(i, j) - want[i][j]).abs() < 1e-12);
            }
        }
        let labels = mutual_nearest_labels(&t);
        assert_eq!(labels.pairs(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn csls_constant_matrix_is_zero() {
        let s = sim(&vec![vec![0.3; 4]; 3], SimilarityKind::Cosine);
        for delta in 1..=3 {
            let t = csls_adjust(&s, delta).unwrap();
            assert!(t.values.as_slice().iter().all(|v| v.abs() < 1e-15));
        }
        assert!(csls_adjust(&s, 0).is_err());
        assert!(csls_adjust(&s, 4).is_err());
    }

    #[test]
    fn ties_disqualify() {
        let t = sim(&[vec![0.5, 0.5]], SimilarityKind::Csls);
        assert!(mutual_nearest_labels(&t).is_empty());
    }

    #[test]
    fn metrics_second_place() {
        let s = sim(&[vec![0.2, 0.9, 0.1], vec![0.1, 0.2, 0.8]], SimilarityKind::Cosine);
        let m = evaluate(&s, &[(0, 0)]);
        assert_eq!((m.hits1, m.hits10, m.mrr), (0.0, 1.0, 0.5));
        let m = evaluate(&s, &[(1, 2)]);
        assert_eq!((m.hits1, m.mrr), (1.0, 1.0));
        // a tie with the true match counts against it
        let s = sim(&[vec![0.5, 0.5]], SimilarityKind::Cosine);
        assert_eq!(evaluate(&s, &[(0, 0)]).mrr, 0.5);
    }
}
