#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unea::alignment::{SimilarityKind, SimilarityMatrix};
use unea::kg::{KnowledgeGraph, Triple};
use unea::tensor::{leaky_relu, softmax};
use unea::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Scores drawn from a small grid so that ties actually occur.
pub fn tied_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(0..8) as f64 / 8.0).collect(),
    )
}

pub fn sim(values: Matrix<f64>) -> SimilarityMatrix<f64> {
    SimilarityMatrix {
        values,
        kind: SimilarityKind::Cosine,
    }
}

/// Explicit `I − 2rrᵀ` for a unit `r`.
pub fn reflection_matrix(r: &[f64]) -> Vec<Vec<f64>> {
    let d = r.len();
    (0..d)
        .map(|i| (0..d).map(|j| f64::from(u8::from(i == j)) - 2.0 * r[i] * r[j]).collect())
        .collect()
}

pub fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Hub 0 linked to entities 1..=n with relation `i % relations`; entity `i`
/// also gets `i − 1` extra spokes to fresh leaves so degrees differ.
pub fn hub_graph(n: usize, relations: usize) -> KnowledgeGraph {
    let mut triples = Vec::new();
    let mut next = n + 1;
    for i in 1..=n {
        triples.push(Triple::new(0, i % relations, i));
        for _ in 1..i {
            triples.push(Triple::new(i, 0, next));
            next += 1;
        }
    }
    KnowledgeGraph::new(next, relations, triples).unwrap()
}

pub fn brute_csls(s: &Matrix<f64>, delta: usize) -> Matrix<f64> {
    let top = |mut xs: Vec<f64>| {
        xs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        xs[..delta].iter().fold(0.0, |acc, x| acc + x) / delta as f64
    };
    let (n, m) = s.shape();
    let rows: Vec<f64> = (0..n).map(|i| top(s.row(i).to_vec())).collect();
    let cols: Vec<f64> = (0..m).map(|j| top((0..n).map(|i| s[(i, j)]).collect())).collect();
    Matrix::from_vec(
        n,
        m,
        (0..n * m).map(|k| 2.0 * s[(k / m, k % m)] - rows[k / m] - cols[k % m]).collect(),
    )
}

pub fn brute_mutual(s: &Matrix<f64>) -> Vec<(usize, usize)> {
    let (n, m) = s.shape();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let v = s[(i, j)];
            let row_best = (0..m).all(|c| c == j || s[(i, c)] < v);
            let col_best = (0..n).all(|r| r == i || s[(r, j)] < v);
            if row_best && col_best {
                out.push((i, j));
            }
        }
    }
    out
}


pub fn full_sort_rank(s: &Matrix<f64>, i: usize, j: usize) -> usize {
    // ties ordered with the true column last
    let mut cols: Vec<usize> = (0..s.cols()).collect();
    cols.sort_by(|&a, &b| {
        s[(i, b)]
            .partial_cmp(&s[(i, a)])
            .unwrap()
            .then((a == j).cmp(&(b == j)))
    });
    cols.iter().position(|&c| c == j).unwrap() + 1
}


/// Softmax of the sampling logits computed with explicit reflection matrices.
pub fn distribution_oracle(
    kg: &KnowledgeGraph,
    entities: &Matrix<f64>,
    relations: &Matrix<f64>,
    root: usize,
) -> Vec<f64> {
    let unit = |k: usize| {
        let r = relations.row(k);
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let e0 = entities.row(root);
    let logits: Vec<f64> = kg
        .neighbors(root)
        .unwrap()
        .iter()
        .map(|&(k, y)| {
            let h = reflection_matrix(&unit(k));
            let wy = mat_vec(&h, entities.row(y));
            let bilinear: f64 = 2.0 * e0.iter().zip(&wy).map(|(a, b)| a * b).sum::<f64>();
            leaky_relu(bilinear, 0.01) / (kg.degree(y).unwrap() as f64).ln_1p()
        })
        .collect();
    softmax(&logits)
}

